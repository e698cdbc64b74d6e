//! Glue between records, probability rows, models and metrics shared by the
//! command handlers and the end-to-end tests.

use anyhow::{bail, Context, Result};
use geomesh_core::data::ImageRecord;
use geomesh_core::features::{
    assemble_m2_input, build_albums, encode_time_utc, filter_top_k_renormalize, Album, AlbumItem, ALBUM_SIZE,
};
use geomesh_core::mesh::{LabelTable, Mesh};
use geomesh_core::metrics::ClassDistribution;
use geomesh_core::models::{argmax, user_average_predict, AlbumNet, DenseNet, M2Dataset};
use geomesh_core::sphere::great_circle_distance;
use ndarray::Array2;
use std::collections::BTreeMap;

/// Probability row of a record, widened to `f64`.
pub fn prob_row(probs: &Array2<f32>, record: &ImageRecord, fallback: usize) -> Result<Vec<f64>> {
    let row = record.prob_row.map_or(fallback, |r| r as usize);
    if row >= probs.nrows() {
        bail!("record {} points at probability row {row} of {}", record.image_id, probs.nrows());
    }
    Ok(probs.row(row).iter().map(|v| f64::from(*v)).collect())
}

/// Dense-network input for one record: filtered probabilities, their kept
/// mass and the encoded posting time.
pub fn m2_input(probs: &Array2<f32>, record: &ImageRecord, fallback: usize, top_k: usize) -> Result<Vec<f64>> {
    let row = prob_row(probs, record, fallback)?;
    let filtered = filter_top_k_renormalize(&row, top_k)
        .with_context(|| format!("filtering probabilities of {}", record.image_id))?;
    Ok(assemble_m2_input(&filtered, &encode_time_utc(&record.posted_time), row.len())?)
}

/// Inputs for the listed record indices, all rows in order.
pub fn m2_matrix(probs: &Array2<f32>, records: &[ImageRecord], indices: &[usize], top_k: usize) -> Result<Array2<f64>> {
    let dim = probs.ncols() + geomesh_core::features::EXTRA_INPUTS;
    let mut out = Array2::zeros((indices.len(), dim));
    for (r, &i) in indices.iter().enumerate() {
        let v = m2_input(probs, &records[i], i, top_k)?;
        out.row_mut(r).assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(out)
}

/// Training rows for the listed records that have a class.
pub fn m2_dataset(
    probs: &Array2<f32>,
    records: &[ImageRecord],
    classes: &[Option<usize>],
    indices: &[usize],
    top_k: usize,
) -> Result<M2Dataset> {
    let kept: Vec<usize> = indices.iter().copied().filter(|&i| classes[i].is_some()).collect();
    Ok(M2Dataset {
        inputs: m2_matrix(probs, records, &kept, top_k)?,
        targets: kept.iter().map(|&i| classes[i].expect("filtered")).collect(),
    })
}

/// Per-image argmax of the raw probability rows.
pub fn baseline_classes(probs: &Array2<f32>, records: &[ImageRecord], indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| Ok(argmax(&prob_row(probs, &records[i], i)?)))
        .collect()
}

/// Dense-network class probabilities, one row per listed record.
pub fn dense_probabilities(
    model: &DenseNet,
    probs: &Array2<f32>,
    records: &[ImageRecord],
    indices: &[usize],
    top_k: usize,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((indices.len(), model.num_classes()));
    for (c, chunk) in indices.chunks(4096).enumerate() {
        let x = m2_matrix(probs, records, chunk, top_k)?;
        let p = model.predict(x.view())?;
        out.slice_mut(ndarray::s![c * 4096..c * 4096 + chunk.len(), ..]).assign(&p);
    }
    Ok(out)
}

pub fn dense_classes(
    model: &DenseNet,
    probs: &Array2<f32>,
    records: &[ImageRecord],
    indices: &[usize],
    top_k: usize,
) -> Result<Vec<usize>> {
    Ok(row_argmax(&dense_probabilities(model, probs, records, indices, top_k)?))
}

pub fn row_argmax(p: &Array2<f64>) -> Vec<usize> {
    p.rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous"))).collect()
}

/// One class per user: argmax of the user's mean probability row.
pub fn user_average_classes(probs: &Array2<f32>, records: &[ImageRecord], indices: &[usize]) -> Result<Vec<usize>> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in indices.iter().enumerate() {
        by_user.entry(records[i].user_id.as_str()).or_default().push(pos);
    }
    let mut out = vec![0; indices.len()];
    for positions in by_user.values() {
        let rows: Vec<Vec<f64>> = positions
            .iter()
            .map(|&p| prob_row(probs, &records[indices[p]], indices[p]))
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let class = user_average_predict(&refs)?;
        for &p in positions {
            out[p] = class;
        }
    }
    Ok(out)
}

/// Albums over the listed records. With `targets`, records lacking a class
/// are left out so every real slot is supervised.
pub fn albums_for(
    probs: &Array2<f32>,
    records: &[ImageRecord],
    classes: Option<&[Option<usize>]>,
    indices: &[usize],
    top_k: usize,
) -> Result<Vec<Album>> {
    let mut items = Vec::with_capacity(indices.len());
    for &i in indices {
        let target = match classes {
            Some(c) => match c[i] {
                Some(t) => Some(t),
                None => continue,
            },
            None => None,
        };
        let r = &records[i];
        items.push(AlbumItem {
            image_id: r.image_id.clone(),
            user_id: r.user_id.clone(),
            posted_time: r.posted_time,
            input: m2_input(probs, r, i, top_k)?,
            target,
        });
    }
    Ok(build_albums(&items, ALBUM_SIZE)?)
}

/// Album-network class probabilities for each listed record, in `indices` order.
pub fn album_probabilities(
    model: &AlbumNet,
    probs: &Array2<f32>,
    records: &[ImageRecord],
    indices: &[usize],
    top_k: usize,
) -> Result<Array2<f64>> {
    let albums = albums_for(probs, records, None, indices, top_k)?;
    let position: BTreeMap<&str, usize> = indices
        .iter()
        .enumerate()
        .map(|(p, &i)| (records[i].image_id.as_str(), p))
        .collect();
    let mut out = Array2::from_elem((indices.len(), model.num_classes()), f64::NAN);
    for album in &albums {
        let p = model.predict_album(album)?;
        for (slot, id) in album.image_ids.iter().enumerate() {
            if let Some(id) = id {
                out.row_mut(position[id.as_str()]).assign(&p.row(slot));
            }
        }
    }
    Ok(out)
}

pub fn album_classes(
    model: &AlbumNet,
    probs: &Array2<f32>,
    records: &[ImageRecord],
    indices: &[usize],
    top_k: usize,
) -> Result<Vec<usize>> {
    Ok(row_argmax(&album_probabilities(model, probs, records, indices, top_k)?))
}

/// Great-circle error of each predicted class label against the record location.
pub fn errors_km(labels: &LabelTable, records: &[ImageRecord], indices: &[usize], classes: &[usize]) -> Result<Vec<f64>> {
    indices
        .iter()
        .zip(classes)
        .map(|(&i, &c)| {
            let label = labels
                .label(c)
                .with_context(|| format!("class {c} has no label"))?;
            Ok(great_circle_distance(label, records[i].location))
        })
        .collect()
}

/// True and predicted class distributions over the records that have a class.
pub fn class_distributions(
    mesh: &Mesh,
    truth: &[Option<usize>],
    indices: &[usize],
    predicted: &[usize],
) -> (ClassDistribution, ClassDistribution) {
    let n = mesh.num_classes();
    let pairs: Vec<(usize, usize)> = indices
        .iter()
        .zip(predicted)
        .filter_map(|(&i, &p)| truth[i].map(|t| (t, p)))
        .collect();
    (
        ClassDistribution::from_classes(pairs.iter().map(|p| p.0), n),
        ClassDistribution::from_classes(pairs.iter().map(|p| p.1), n),
    )
}

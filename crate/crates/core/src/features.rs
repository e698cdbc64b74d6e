//! Model inputs derived from upstream probability vectors and posting metadata.

use crate::data::ImageRecord;
use chrono::{DateTime, Datelike, Timelike, Utc};
use ndarray::Array2;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_TOP_K: usize = 10;
pub const ALBUM_SIZE: usize = 24;
/// Extra inputs appended after the class probabilities: kept mass + 3 time features.
pub const EXTRA_INPUTS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("probability vector has no positive mass")]
    Degenerate,
    #[error("probability entry {index} is invalid ({value})")]
    InvalidProbability { index: usize, value: f64 },
    #[error("top-k requires k >= 1")]
    ZeroK,
    #[error("cannot parse timestamp `{0}`")]
    Timestamp(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

/// Top-k filtered probabilities and the mass they held before renormalizing.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredProbs {
    pub p1: Vec<f64>,
    pub l1_norm: f64,
}

/// Keeps the `k` largest entries (lowest index wins ties), zeroes the rest and
/// renormalizes the survivors.
pub fn filter_top_k_renormalize(p: &[f64], k: usize) -> Result<FilteredProbs, FeatureError> {
    if k == 0 {
        return Err(FeatureError::ZeroK);
    }
    if let Some((index, &value)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(FeatureError::InvalidProbability { index, value });
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    let by_rank = |a: &usize, b: &usize| p[*b].partial_cmp(&p[*a]).unwrap_or(Ordering::Equal).then(a.cmp(b));
    if k < p.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    let kept: f64 = order.iter().map(|&i| p[i]).sum();
    if kept <= 0.0 {
        return Err(FeatureError::Degenerate);
    }
    let mut p1 = vec![0.0; p.len()];
    for &i in &order {
        p1[i] = p[i] / kept;
    }
    Ok(FilteredProbs { p1, l1_norm: kept })
}

/// Centered calendar features of a UTC posting time; the year is ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures {
    pub hour_f: f64,
    pub dow_f: f64,
    pub month_f: f64,
}

impl TimeFeatures {
    /// `hour` in 0..24, `day_of_week` in 1..=7 with Sunday = 1, `month` in 1..=12.
    pub fn from_fields(hour: u32, day_of_week: u32, month: u32) -> Self {
        Self {
            hour_f: (hour as f64 - 11.5) / 24.0,
            dow_f: (day_of_week as f64 - 3.5) / 7.0,
            month_f: (month as f64 - 6.5) / 12.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.hour_f, self.dow_f, self.month_f]
    }
}

pub fn encode_time_utc(t: &DateTime<Utc>) -> TimeFeatures {
    TimeFeatures::from_fields(t.hour(), t.weekday().number_from_sunday(), t.month())
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, FeatureError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| FeatureError::Timestamp(s.to_string()))
}

pub fn encode_time(timestamp: &str) -> Result<TimeFeatures, FeatureError> {
    parse_timestamp(timestamp).map(|t| encode_time_utc(&t))
}

/// `[p1 (N), l1_norm, hour_f, dow_f, month_f]`.
pub fn assemble_m2_input(
    f: &FilteredProbs,
    t: &TimeFeatures,
    num_classes: usize,
) -> Result<Vec<f64>, FeatureError> {
    if f.p1.len() != num_classes {
        return Err(FeatureError::Dimension {
            expected: num_classes,
            found: f.p1.len(),
        });
    }
    let mut out = Vec::with_capacity(num_classes + EXTRA_INPUTS);
    out.extend_from_slice(&f.p1);
    out.push(f.l1_norm);
    out.extend_from_slice(&t.as_array());
    Ok(out)
}

/// One image ready to be placed in an album.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbumItem {
    pub image_id: String,
    pub user_id: String,
    pub posted_time: DateTime<Utc>,
    pub input: Vec<f64>,
    pub target: Option<usize>,
}

/// A fixed-size chronological chunk of one user's images.
#[derive(Debug, Clone, PartialEq)]
pub struct Album {
    pub user_id: String,
    /// `album_size x input_dim`; padded rows are zero.
    pub entries: Array2<f64>,
    pub mask: Vec<bool>,
    pub targets: Vec<Option<usize>>,
    pub image_ids: Vec<Option<String>>,
}

impl Album {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn input_dim(&self) -> usize {
        self.entries.ncols()
    }
}

/// Groups items by user (users in lexicographic order), sorts each user's
/// images by posting time then image id, and cuts consecutive chunks of
/// `album_size`, zero-padding the last one.
pub fn build_albums(items: &[AlbumItem], album_size: usize) -> Result<Vec<Album>, FeatureError> {
    let mut by_user: BTreeMap<&str, Vec<&AlbumItem>> = BTreeMap::new();
    for item in items {
        by_user.entry(item.user_id.as_str()).or_default().push(item);
    }
    let dim = items.first().map_or(0, |i| i.input.len());
    let mut albums = Vec::new();
    for (user, mut list) in by_user {
        list.sort_by(|a, b| {
            a.posted_time
                .cmp(&b.posted_time)
                .then_with(|| a.image_id.cmp(&b.image_id))
        });
        for chunk in list.chunks(album_size.max(1)) {
            let mut entries = Array2::zeros((album_size, dim));
            let mut mask = vec![false; album_size];
            let mut targets = vec![None; album_size];
            let mut image_ids = vec![None; album_size];
            for (slot, item) in chunk.iter().enumerate() {
                if item.input.len() != dim {
                    return Err(FeatureError::Dimension {
                        expected: dim,
                        found: item.input.len(),
                    });
                }
                entries.row_mut(slot).assign(&ndarray::ArrayView1::from(&item.input));
                mask[slot] = true;
                targets[slot] = item.target;
                image_ids[slot] = Some(item.image_id.clone());
            }
            albums.push(Album {
                user_id: user.to_string(),
                entries,
                mask,
                targets,
                image_ids,
            });
        }
    }
    Ok(albums)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutdoorSelection {
    pub kept: Vec<ImageRecord>,
    /// Records excluded, either flagged indoor or lacking the flag.
    pub skipped: usize,
    /// Subset of `skipped` with no flag at all.
    pub missing_flag: usize,
}

/// Keeps records flagged outdoor, preserving order.
pub fn filter_outdoor(records: &[ImageRecord]) -> OutdoorSelection {
    let kept: Vec<ImageRecord> = records
        .iter()
        .filter(|r| r.outdoor == Some(true))
        .cloned()
        .collect();
    OutdoorSelection {
        skipped: records.len() - kept.len(),
        missing_flag: records.iter().filter(|r| r.outdoor.is_none()).count(),
        kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::GeoPoint;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn short_vector_is_unchanged() {
        let f = filter_top_k_renormalize(&[0.5, 0.3, 0.2], 10).unwrap();
        assert_eq!(f.p1, vec![0.5, 0.3, 0.2]);
        assert!((f.l1_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_ties_keep_lowest_indices() {
        let p = vec![0.05; 20];
        let f = filter_top_k_renormalize(&p, 10).unwrap();
        for (i, v) in f.p1.iter().enumerate() {
            let expected = if i < 10 { 0.1 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "{i}: {v}");
        }
        assert!((f.l1_norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_hot_is_unchanged() {
        let mut p = vec![0.0; 30];
        p[17] = 1.0;
        let f = filter_top_k_renormalize(&p, 10).unwrap();
        assert_eq!(f.p1, p);
        assert_eq!(f.l1_norm, 1.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert_eq!(filter_top_k_renormalize(&[0.0; 5], 3), Err(FeatureError::Degenerate));
        assert_eq!(filter_top_k_renormalize(&[0.5, 0.5], 0), Err(FeatureError::ZeroK));
        assert!(matches!(
            filter_top_k_renormalize(&[0.5, -0.1], 1),
            Err(FeatureError::InvalidProbability { index: 1, .. })
        ));
    }

    #[test]
    fn sunday_midnight_january() {
        let t = encode_time("2012-01-01T00:30:00Z").unwrap();
        assert_eq!(t.hour_f, -11.5 / 24.0);
        assert_eq!(t.dow_f, -2.5 / 7.0);
        assert_eq!(t.month_f, -5.5 / 12.0);
        assert!((t.hour_f + 0.479167).abs() < 1e-6);
        assert!((t.dow_f + 0.357143).abs() < 1e-6);
        assert!((t.month_f + 0.458333).abs() < 1e-6);
    }

    #[test]
    fn saturday_late_december() {
        // 2012-12-29 was a Saturday.
        let t = encode_time("2012-12-29T23:59:00Z").unwrap();
        assert_eq!(t.as_array(), [11.5 / 24.0, 3.5 / 7.0, 5.5 / 12.0]);
    }

    #[test]
    fn offsets_are_converted_to_utc() {
        let a = encode_time("2015-06-10T02:00:00+05:00").unwrap();
        let b = encode_time("2015-06-09T21:00:00Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(
            encode_time("yesterday"),
            Err(FeatureError::Timestamp("yesterday".into()))
        );
    }

    #[test]
    fn time_features_take_24_7_12_values() {
        let start = Utc.with_ymd_and_hms(2013, 1, 1, 0, 0, 0).unwrap();
        let mut hours = HashSet::new();
        let mut days = HashSet::new();
        let mut months = HashSet::new();
        for h in 0..(366 * 24) {
            let t = encode_time_utc(&(start + chrono::Duration::hours(h)));
            hours.insert(t.hour_f.to_bits());
            days.insert(t.dow_f.to_bits());
            months.insert(t.month_f.to_bits());
        }
        assert_eq!((hours.len(), days.len(), months.len()), (24, 7, 12));
    }

    #[test]
    fn m2_input_layout() {
        for n in [538usize, 6565] {
            let mut p = vec![0.0; n];
            p[3] = 0.7;
            p[n - 1] = 0.1;
            let f = filter_top_k_renormalize(&p, 10).unwrap();
            let t = TimeFeatures::from_fields(5, 2, 8);
            let x = assemble_m2_input(&f, &t, n).unwrap();
            assert_eq!(x.len(), n + 4);
            assert_eq!(&x[..n], f.p1.as_slice());
            assert_eq!(x[n], f.l1_norm);
            assert_eq!(&x[n + 1..], &t.as_array());
        }
        let f = filter_top_k_renormalize(&[1.0, 0.0], 10).unwrap();
        assert_eq!(
            assemble_m2_input(&f, &TimeFeatures::from_fields(0, 1, 1), 3),
            Err(FeatureError::Dimension { expected: 3, found: 2 })
        );
    }

    fn item(user: &str, id: &str, minute: i64) -> AlbumItem {
        let base = Utc.with_ymd_and_hms(2014, 3, 1, 0, 0, 0).unwrap();
        AlbumItem {
            image_id: id.into(),
            user_id: user.into(),
            posted_time: base + chrono::Duration::minutes(minute),
            input: vec![minute as f64, 1.0],
            target: Some(minute as usize % 3),
        }
    }

    #[test]
    fn album_chunking() {
        let full: Vec<AlbumItem> = (0..24).map(|i| item("a", &format!("a{i:02}"), i)).collect();
        let albums = build_albums(&full, ALBUM_SIZE).unwrap();
        assert_eq!(albums.len(), 1);
        assert!(albums[0].mask.iter().all(|m| *m));

        let over: Vec<AlbumItem> = (0..25).rev().map(|i| item("b", &format!("b{i:02}"), i)).collect();
        let albums = build_albums(&over, ALBUM_SIZE).unwrap();
        assert_eq!(albums.len(), 2);
        assert_eq!(albums[1].real_count(), 1);
        assert_eq!(albums[1].entries[[0, 0]], 24.0);
        assert!(albums[1].entries.slice(ndarray::s![1.., ..]).iter().all(|v| *v == 0.0));
        // Chronological order inside the first album.
        let times: Vec<f64> = albums[0].entries.column(0).to_vec();
        assert_eq!(times, (0..24).map(|i| i as f64).collect::<Vec<_>>());

        let single = build_albums(&[item("c", "c0", 5)], ALBUM_SIZE).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].mask.iter().filter(|m| **m).count(), 1);
        assert!(single[0].mask[0]);
    }

    #[test]
    fn album_ties_break_by_image_id() {
        let items = vec![item("u", "z", 0), item("u", "a", 0), item("u", "m", 0)];
        let albums = build_albums(&items, 4).unwrap();
        let ids: Vec<Option<String>> = albums[0].image_ids.clone();
        assert_eq!(
            ids,
            vec![Some("a".into()), Some("m".into()), Some("z".into()), None]
        );
    }

    fn record(id: usize, outdoor: Option<bool>) -> ImageRecord {
        ImageRecord {
            image_id: format!("img{id}"),
            user_id: "u".into(),
            location: GeoPoint::new(0.0, 0.0).unwrap(),
            posted_time: Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap(),
            outdoor,
            prob_row: None,
        }
    }

    #[test]
    fn outdoor_filter() {
        let all: Vec<ImageRecord> = (0..5).map(|i| record(i, Some(true))).collect();
        let sel = filter_outdoor(&all);
        assert_eq!(sel.kept, all);
        assert_eq!(sel.skipped, 0);

        let none: Vec<ImageRecord> = (0..5).map(|i| record(i, None)).collect();
        let sel = filter_outdoor(&none);
        assert!(sel.kept.is_empty());
        assert_eq!((sel.skipped, sel.missing_flag), (5, 5));

        let flags = [Some(true), None, Some(false), Some(true), None, Some(false), Some(true), None, Some(true), Some(false)];
        let mixed: Vec<ImageRecord> = flags.iter().enumerate().map(|(i, f)| record(i, *f)).collect();
        let sel = filter_outdoor(&mixed);
        let ids: Vec<&str> = sel.kept.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, vec!["img0", "img3", "img6", "img8"]);
        assert_eq!(sel.skipped, 6);
    }

    proptest! {
        #[test]
        fn top_k_is_idempotent(p in prop::collection::vec(0.0f64..1.0, 1..40), k in 1usize..15) {
            prop_assume!(p.iter().any(|v| *v > 0.0));
            let once = filter_top_k_renormalize(&p, k).unwrap();
            let twice = filter_top_k_renormalize(&once.p1, k).unwrap();
            for (a, b) in once.p1.iter().zip(&twice.p1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(once.p1.iter().filter(|v| **v > 0.0).count() <= k);
            prop_assert!((once.p1.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn top_k_scale_invariance(p in prop::collection::vec(0.0f64..1.0, 1..40), scale in 0.01f64..100.0) {
            prop_assume!(p.iter().any(|v| *v > 0.0));
            let base = filter_top_k_renormalize(&p, 10).unwrap();
            let scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let other = filter_top_k_renormalize(&scaled, 10).unwrap();
            for (a, b) in base.p1.iter().zip(&other.p1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((other.l1_norm - base.l1_norm * scale).abs() <= 1e-12 * other.l1_norm.max(1.0));
        }

        #[test]
        fn time_features_depend_only_on_fields(secs in 0i64..4_000_000_000, within in 0i64..60) {
            let t = DateTime::from_timestamp(secs - secs % 3600, 0).unwrap();
            let u = t + chrono::Duration::minutes(within);
            prop_assert_eq!(encode_time_utc(&t), encode_time_utc(&u));
            let f = encode_time_utc(&t);
            prop_assert!(f.hour_f.abs() <= 11.5 / 24.0);
            prop_assert!(f.dow_f >= -2.5 / 7.0 && f.dow_f <= 3.5 / 7.0);
            prop_assert!(f.month_f.abs() <= 5.5 / 12.0);
        }

        #[test]
        fn albums_conserve_images(counts in prop::collection::vec(1usize..60, 1..6)) {
            let mut items = Vec::new();
            for (u, &c) in counts.iter().enumerate() {
                for i in 0..c {
                    items.push(item(&format!("u{u}"), &format!("u{u}-{i:03}"), (i * 7 % c) as i64));
                }
            }
            let albums = build_albums(&items, ALBUM_SIZE).unwrap();
            for (u, &c) in counts.iter().enumerate() {
                let user = format!("u{u}");
                let mine: Vec<&Album> = albums.iter().filter(|a| a.user_id == user).collect();
                prop_assert_eq!(mine.len(), c.div_ceil(ALBUM_SIZE));
                prop_assert_eq!(mine.iter().map(|a| a.real_count()).sum::<usize>(), c);
                for a in mine {
                    let n = a.real_count();
                    prop_assert!(a.mask[..n].iter().all(|m| *m));
                    prop_assert!(a.mask[n..].iter().all(|m| !*m));
                }
            }
        }
    }
}

//! MedMNIST `.npz` files: keys `{train,val,test}_{images,labels}`, images
//! stored `[N, H, W]` (grayscale) or `[N, H, W, C]` as `uint8`, labels
//! `[N, 1]` or `[N]`.

use std::collections::BTreeMap;
use std::path::Path;

use super::npy::{NpyArray, NpyData};
use super::npz::parse_npz;
use super::{DataError, DatasetSplit, PixelTransform, SplitName, Splits};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MedMnistInfo {
    pub name: &'static str,
    pub n_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Official split sizes and class counts.
pub const MEDMNIST: &[MedMnistInfo] = &[
    MedMnistInfo { name: "breastmnist", n_classes: 2, train: 546, val: 78, test: 156 },
    MedMnistInfo { name: "retinamnist", n_classes: 5, train: 1080, val: 120, test: 400 },
    MedMnistInfo { name: "pneumoniamnist", n_classes: 2, train: 4708, val: 524, test: 624 },
    MedMnistInfo { name: "dermamnist", n_classes: 7, train: 7007, val: 1003, test: 2005 },
    MedMnistInfo { name: "bloodmnist", n_classes: 8, train: 11959, val: 1712, test: 3421 },
    MedMnistInfo { name: "organcmnist", n_classes: 11, train: 13000, val: 2392, test: 8268 },
    MedMnistInfo { name: "pathmnist", n_classes: 9, train: 89996, val: 10004, test: 7180 },
];

pub fn info(name: &str) -> Option<&'static MedMnistInfo> {
    MEDMNIST.iter().find(|d| d.name == name)
}

/// Loads `<root>/<name>.npz`, checking split sizes against the official table.
pub fn load_medmnist(root: &Path, name: &str) -> Result<Splits, DataError> {
    let meta = info(name).ok_or_else(|| DataError::UnknownDataset(name.to_string()))?;
    let bytes = std::fs::read(root.join(format!("{name}.npz")))?;
    let splits = load_npz_splits(&parse_npz(&bytes)?, Some(meta.n_classes))?;
    for (split, expected) in [(&splits.train, meta.train), (&splits.val, meta.val), (&splits.test, meta.test)] {
        if split.len() != expected {
            return Err(DataError::Shape(format!(
                "{name} {} split has {} samples, expected {expected}",
                split.split,
                split.len()
            )));
        }
    }
    Ok(splits)
}

/// Builds splits from decoded members. `n_classes` defaults to one more
/// than the largest label seen in any split.
pub fn load_npz_splits(
    members: &BTreeMap<String, NpyArray>,
    n_classes: Option<usize>,
) -> Result<Splits, DataError> {
    let get = |key: String| members.get(&key).ok_or(DataError::MissingKey(key));
    let mut raw = Vec::new();
    for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let images = get(format!("{split}_images"))?;
        let labels = get(format!("{split}_labels"))?;
        raw.push((split, images, labels));
    }
    let mut decoded = Vec::new();
    for (split, images, labels) in raw {
        decoded.push(decode_split(split, images, labels)?);
    }
    let n_classes = match n_classes {
        Some(c) => c,
        None => decoded.iter().flat_map(|s| s.labels.iter()).max().map_or(0, |m| m + 1),
    };
    for s in &mut decoded {
        s.n_classes = n_classes;
        s.validate()?;
    }
    let mut it = decoded.into_iter();
    let (train, val, test) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    if train.image_len() != val.image_len() || train.image_len() != test.image_len() {
        return Err(DataError::Shape("splits disagree on image shape".into()));
    }
    Ok(Splits { train, val, test })
}

fn decode_split(split: SplitName, images: &NpyArray, labels: &NpyArray) -> Result<DatasetSplit, DataError> {
    let (n, h, w, c) = match images.shape.as_slice() {
        &[n, h, w] => (n, h, w, 1),
        &[n, h, w, c] => (n, h, w, c),
        other => return Err(DataError::Shape(format!("{split}_images has shape {other:?}"))),
    };
    let label_ok = match labels.shape.as_slice() {
        &[m] | &[m, 1] => m == n,
        _ => false,
    };
    if !label_ok {
        return Err(DataError::Shape(format!(
            "{split}_labels has shape {:?} for {n} images",
            labels.shape
        )));
    }
    let label_values = labels
        .data
        .to_usize()
        .ok_or_else(|| DataError::Range(format!("{split}_labels must be non-negative integers")))?;

    let pixels = match &images.data {
        NpyData::U8(v) => v.iter().map(|&x| f64::from(x) / 255.0).collect::<Vec<_>>(),
        other => other.to_f64(),
    };
    // HWC -> CHW
    let mut chw = vec![0.0; pixels.len()];
    let plane = h * w;
    for i in 0..n {
        let src = &pixels[i * plane * c..(i + 1) * plane * c];
        let dst = &mut chw[i * plane * c..(i + 1) * plane * c];
        for p in 0..plane {
            for ch in 0..c {
                dst[ch * plane + p] = src[p * c + ch];
            }
        }
    }
    Ok(DatasetSplit {
        split,
        images: chw,
        labels: label_values,
        channels: c,
        height: h,
        width: w,
        n_classes: 0,
        transform: PixelTransform::Unit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn members(drop: Option<&str>) -> BTreeMap<String, NpyArray> {
        let mut m = BTreeMap::new();
        for (split, n) in [("train", 3), ("val", 1), ("test", 2)] {
            // 2x2 RGB images, channel c of pixel p = 10*p + c
            let px: Vec<u8> = (0..n).flat_map(|_| (0..4).flat_map(|p| (0..3).map(move |c| 10 * p + c))).collect();
            m.insert(format!("{split}_images"), NpyArray::new(vec![n, 2, 2, 3], NpyData::U8(px)));
            let labels: Vec<u8> = (0..n as u8).collect();
            m.insert(format!("{split}_labels"), NpyArray::new(vec![n, 1], NpyData::U8(labels)));
        }
        if let Some(k) = drop {
            m.remove(k);
        }
        m
    }

    #[test]
    fn hwc_to_chw_and_scaling() {
        let s = load_npz_splits(&members(None), None).unwrap();
        assert_eq!(s.train.len(), 3);
        assert_eq!(s.train.n_classes, 3);
        assert_eq!((s.train.channels, s.train.height, s.train.width), (3, 2, 2));
        let img = s.train.image(0);
        // channel 1 plane: pixels 0..4 -> 1, 11, 21, 31
        let expect: Vec<f64> = [1.0, 11.0, 21.0, 31.0].iter().map(|v| v / 255.0).collect();
        assert_eq!(&img[4..8], expect.as_slice());
    }

    #[test]
    fn missing_key_is_incomplete_dataset() {
        let err = load_npz_splits(&members(Some("val_labels")), None).unwrap_err();
        assert!(matches!(err, DataError::MissingKey(ref k) if k == "val_labels"));
        assert!(err.to_string().contains("incomplete dataset"));
    }

    #[test]
    fn label_out_of_declared_range() {
        assert!(matches!(load_npz_splits(&members(None), Some(2)), Err(DataError::Range(_))));
    }

    #[test]
    fn table_sizes() {
        let r = info("retinamnist").unwrap();
        assert_eq!((r.train, r.val, r.test, r.n_classes), (1080, 120, 400, 5));
        assert_eq!(MEDMNIST.len(), 7);
    }
}

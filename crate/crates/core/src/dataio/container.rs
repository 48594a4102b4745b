use std::collections::BTreeMap;
use std::path::Path;

use hdf5_metno::types::{TypeDescriptor, VarLenUnicode};
use hdf5_metno::{Dataset, File, Location};
use ndarray::Array2;

use super::{DatasetFile, GroundTruth};
use crate::error::{Error, Result};
use crate::space::{BitMatrix, DenseMatrix, Metric, PointKind, PointSet};
use crate::Points;

// Attribute names owned by the container layout. `distance` and `point_type`
// duplicate `metric` and `point_kind` for files produced by upstream tooling.
const RESERVED: [&str; 5] = ["name", "metric", "point_kind", "distance", "point_type"];

pub(crate) fn write_str_attr(loc: &Location, key: &str, value: &str) -> Result<()> {
    let v: VarLenUnicode = value
        .parse()
        .map_err(|e| Error::format(format!("attribute {key}: {e}")))?;
    loc.new_attr::<VarLenUnicode>().create(key)?.write_scalar(&v)?;
    Ok(())
}

/// Reads a scalar attribute of any string or numeric type as text.
pub(crate) fn read_attr_text(loc: &Location, key: &str) -> Result<String> {
    let attr = loc.attr(key)?;
    let desc = attr.dtype()?.to_descriptor()?;
    let text = match desc {
        TypeDescriptor::VarLenUnicode => attr.read_scalar::<VarLenUnicode>()?.as_str().to_owned(),
        TypeDescriptor::VarLenAscii => attr
            .read_scalar::<hdf5_metno::types::VarLenAscii>()?
            .as_str()
            .to_owned(),
        TypeDescriptor::FixedAscii(_) | TypeDescriptor::FixedUnicode(_) => {
            let raw = attr.read_raw::<u8>();
            match raw {
                Ok(bytes) => String::from_utf8_lossy(&bytes).trim_end_matches('\0').to_owned(),
                Err(_) => attr.read_scalar::<VarLenUnicode>()?.as_str().to_owned(),
            }
        }
        TypeDescriptor::Integer(_) | TypeDescriptor::Unsigned(_) => attr.read_scalar::<i64>()?.to_string(),
        TypeDescriptor::Float(_) => attr.read_scalar::<f64>()?.to_string(),
        TypeDescriptor::Boolean => attr.read_scalar::<bool>()?.to_string(),
        other => return Err(Error::format(format!("attribute {key} has unsupported type {other:?}"))),
    };
    Ok(text)
}

pub(crate) fn read_attrs(loc: &Location) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for key in loc.attr_names()? {
        out.insert(key.clone(), read_attr_text(loc, &key)?);
    }
    Ok(out)
}

pub(crate) fn require<'a>(file: &'a File, name: &str) -> Result<Dataset> {
    if !file.link_exists(name) {
        return Err(Error::format(format!("missing array `{name}`")));
    }
    Ok(file.dataset(name)?)
}

pub(crate) fn shape2(ds: &Dataset, name: &str) -> Result<(usize, usize)> {
    match ds.shape().as_slice() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::format(format!("array `{name}` has shape {other:?}, expected 2-d"))),
    }
}

fn write_points(file: &File, name: &str, points: &Points) -> Result<()> {
    match points {
        PointSet::Dense(m) => {
            let arr = Array2::from_shape_vec((m.rows(), m.dim()), m.as_slice().to_vec())
                .map_err(|e| Error::format(e.to_string()))?;
            file.new_dataset_builder().with_data(&arr).create(name)?;
        }
        PointSet::Bits(m) => {
            let arr = Array2::from_shape_vec((m.rows(), m.dim()), m.to_bytes_per_bit())
                .map_err(|e| Error::format(e.to_string()))?;
            file.new_dataset_builder().with_data(&arr).create(name)?;
        }
    }
    Ok(())
}

fn read_points(file: &File, name: &str, kind: PointKind) -> Result<Points> {
    let ds = require(file, name)?;
    let (rows, dim) = shape2(&ds, name)?;
    match kind {
        PointKind::Float => {
            let data = ds.read_raw::<f32>()?;
            Ok(PointSet::Dense(DenseMatrix::new(data, rows, dim)?))
        }
        PointKind::Bit => {
            let desc = ds.dtype()?.to_descriptor()?;
            let bytes: Vec<u8> = match desc {
                TypeDescriptor::Boolean => ds.read_raw::<bool>()?.into_iter().map(u8::from).collect(),
                TypeDescriptor::Unsigned(_) | TypeDescriptor::Integer(_) => ds.read_raw::<u8>()?,
                other => {
                    return Err(Error::format(format!(
                        "array `{name}` has type {other:?}, expected one bit per entry"
                    )))
                }
            };
            Ok(PointSet::Bits(BitMatrix::from_bytes_per_bit(&bytes, rows, dim)?))
        }
    }
}

/// Writes `ds` to `path` atomically (temporary file, then rename).
pub fn write_dataset(ds: &DatasetFile, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = tmp_path(path);
    let result = (|| -> Result<()> {
        let file = File::create(&tmp)?;
        write_points(&file, "train", &ds.train)?;
        write_points(&file, "test", &ds.test)?;
        let gt = &ds.ground_truth;
        let ids = gt
            .ids
            .iter()
            .map(|&i| i32::try_from(i).map_err(|_| Error::format(format!("id {i} exceeds i32"))))
            .collect::<Result<Vec<i32>>>()?;
        let neighbors = Array2::from_shape_vec((gt.rows(), gt.depth()), ids)
            .map_err(|e| Error::format(e.to_string()))?;
        file.new_dataset_builder().with_data(&neighbors).create("neighbors")?;
        let distances = Array2::from_shape_vec((gt.rows(), gt.depth()), gt.distances.clone())
            .map_err(|e| Error::format(e.to_string()))?;
        file.new_dataset_builder().with_data(&distances).create("distances")?;

        write_str_attr(&file, "name", &ds.name)?;
        write_str_attr(&file, "metric", ds.metric.as_str())?;
        write_str_attr(&file, "point_kind", ds.point_kind().as_str())?;
        write_str_attr(&file, "distance", ds.metric.as_str())?;
        write_str_attr(&file, "point_type", ds.point_kind().as_str())?;
        for (k, v) in &ds.attributes {
            if RESERVED.contains(&k.as_str()) {
                return Err(Error::format(format!("attribute name `{k}` is reserved")));
            }
            write_str_attr(&file, k, v)?;
        }
        file.close()?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Reads a dataset file. Accepts both this crate's layout and upstream
/// benchmark files (`distance`/`point_type` attributes, bool bit arrays).
pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    if !path.exists() {
        return Err(Error::usage(format!("no such dataset file: {}", path.display())));
    }
    let file = File::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut attributes = read_attrs(&file)?;
    let metric_text = attributes
        .get("metric")
        .or_else(|| attributes.get("distance"))
        .cloned()
        .ok_or_else(|| Error::format("missing attribute `metric`"))?;
    let metric: Metric = metric_text
        .parse()
        .map_err(|_| Error::validation(format!("unsupported metric `{metric_text}`")))?;
    let kind_text = attributes
        .get("point_kind")
        .or_else(|| attributes.get("point_type"))
        .cloned()
        .unwrap_or_else(|| metric.point_kind().as_str().to_owned());
    let kind: PointKind = kind_text
        .parse()
        .map_err(|_| Error::validation(format!("unsupported point kind `{kind_text}`")))?;
    if kind != metric.point_kind() {
        return Err(Error::validation(format!(
            "metric {metric} does not apply to {kind} points"
        )));
    }
    let name = attributes.get("name").cloned().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    for key in RESERVED {
        attributes.remove(key);
    }

    let train = read_points(&file, "train", kind)?;
    let test = read_points(&file, "test", kind)?;
    let neighbors = require(&file, "neighbors")?;
    let distances = require(&file, "distances")?;
    let (nr, nc) = shape2(&neighbors, "neighbors")?;
    let (dr, dc) = shape2(&distances, "distances")?;
    if (nr, nc) != (dr, dc) {
        return Err(Error::format(format!(
            "neighbors is {nr}x{nc} but distances is {dr}x{dc}"
        )));
    }
    let ids = neighbors
        .read_raw::<i64>()?
        .into_iter()
        .map(|i| usize::try_from(i).map_err(|_| Error::format(format!("negative neighbor id {i}"))))
        .collect::<Result<Vec<_>>>()?;
    let dists = distances.read_raw::<f32>()?;
    if nc == 0 {
        return Err(Error::format("ground truth has depth 0"));
    }
    Ok(DatasetFile {
        name,
        metric,
        train,
        test,
        ground_truth: GroundTruth::new(nc, ids, dists)?,
        attributes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{compute_ground_truth, gen_random_uniform, GeneratorKind, GeneratorSpec};

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GeneratorSpec {
            depth: 3,
            ..GeneratorSpec::new(GeneratorKind::RandomUniform, "rt", 10, 4, 4, 5)
        };
        let ds = gen_random_uniform(&spec).unwrap();
        let path = dir.path().join("rt.hdf5");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);

        let bits = gen_random_uniform(&GeneratorSpec {
            metric: Metric::Hamming,
            depth: 2,
            ..GeneratorSpec::new(GeneratorKind::RandomUniform, "rtb", 12, 3, 70, 6)
        })
        .unwrap();
        let path = dir.path().join("rtb.hdf5");
        write_dataset(&bits, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), bits);
    }

    #[test]
    fn missing_distances_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.hdf5");
        let file = File::create(&path).unwrap();
        let arr = Array2::<f32>::zeros((3, 2));
        file.new_dataset_builder().with_data(&arr).create("train").unwrap();
        file.new_dataset_builder().with_data(&arr).create("test").unwrap();
        let nb = Array2::<i32>::zeros((3, 1));
        file.new_dataset_builder().with_data(&nb).create("neighbors").unwrap();
        write_str_attr(&file, "distance", "euclidean").unwrap();
        file.close().unwrap();
        match read_dataset(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("distances"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn metric_kind_mismatch_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mismatch.hdf5");
        let file = File::create(&path).unwrap();
        write_str_attr(&file, "metric", "hamming").unwrap();
        write_str_attr(&file, "point_kind", "float").unwrap();
        file.close().unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn hand_built_dataset_validates_after_reading() {
        let train: Points = PointSet::Dense(
            DenseMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [0.0, 2.0]]).unwrap(),
        );
        let test: Points = PointSet::Dense(DenseMatrix::from_rows(&[[0.9f32, 0.1]]).unwrap());
        let gt = compute_ground_truth(&train, &test, 1, Metric::Euclidean).unwrap();
        assert_eq!(gt.ids(0), &[1]);
        let ds = DatasetFile {
            name: "three".into(),
            metric: Metric::Euclidean,
            train,
            test,
            ground_truth: gt,
            attributes: BTreeMap::from([("source".to_owned(), "hand".to_owned())]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("three.hdf5");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        back.validate(1e-6, true).unwrap();
        assert_eq!(back.attributes["source"], "hand");
    }
}

//! Python bindings: `import evobc`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use evobc_core::catalog::{self, ConversionTable};
use evobc_core::imaging::{self, Connectivity, ThresholdPolicy};
use evobc_core::imnnb::{self as core_imnnb, ImnnbParams};
use evobc_core::synthgen::{self, PageSpec};
use evobc_core::{Era, LayoutSpec, SourceKind};

fn err(e: evobc_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn policy(threshold: Option<u8>) -> ThresholdPolicy {
    threshold.map_or(ThresholdPolicy::Otsu, ThresholdPolicy::Fixed)
}

fn connectivity(c: u8) -> PyResult<Connectivity> {
    match c {
        4 => Ok(Connectivity::Four),
        8 => Ok(Connectivity::Eight),
        _ => Err(PyValueError::new_err("connectivity must be 4 or 8")),
    }
}

/// Half-open pixel box `(x0, y0, x1, y1)`.
#[pyclass(name = "BBox", frozen, eq, hash, from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyBBox(evobc_core::BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> PyResult<Self> {
        evobc_core::BBox::new(x0, y0, x1, y1).map(Self).map_err(err)
    }

    #[getter]
    fn x0(&self) -> u32 {
        self.0.x0()
    }
    #[getter]
    fn y0(&self) -> u32 {
        self.0.y0()
    }
    #[getter]
    fn x1(&self) -> u32 {
        self.0.x1()
    }
    #[getter]
    fn y1(&self) -> u32 {
        self.0.y1()
    }

    fn area(&self) -> u64 {
        self.0.area()
    }

    fn center(&self) -> (u32, u32) {
        let c = self.0.center();
        (c.x, c.y)
    }

    fn overlaps(&self, other: &PyBBox) -> bool {
        self.0.overlaps(&other.0)
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        self.0.iou(&other.0)
    }

    fn hull(&self, other: &PyBBox) -> PyBBox {
        PyBBox(self.0.hull(&other.0))
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_tuple(&self) -> (u32, u32, u32, u32) {
        let [a, b, c, d] = self.0.to_array();
        (a, b, c, d)
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.0.to_array();
        format!("BBox({a}, {b}, {c}, {d})")
    }
}

fn wrap(boxes: Vec<evobc_core::BBox>) -> Vec<PyBBox> {
    boxes.into_iter().map(PyBBox).collect()
}

fn unwrap(boxes: Vec<PyBBox>) -> Vec<evobc_core::BBox> {
    boxes.into_iter().map(|b| b.0).collect()
}

/// 8-bit grayscale image, row-major, 0 = black.
#[pyclass(name = "GrayImage", skip_from_py_object)]
#[derive(Clone)]
struct PyGrayImage(evobc_core::GrayImage);

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: u32, height: u32, pixels: Vec<u8>) -> PyResult<Self> {
        evobc_core::GrayImage::new(width, height, pixels)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        evobc_core::io::load_gray(&path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        evobc_core::io::save_gray(&path, &self.0).map_err(err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.pixels())
    }

    fn get(&self, x: u32, y: u32) -> PyResult<u8> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err("pixel outside the image"));
        }
        Ok(self.0.get(x, y))
    }

    /// `"dark_on_light"` or `"light_on_dark"`.
    fn polarity(&self) -> &'static str {
        match imaging::detect_polarity(&self.0) {
            imaging::Polarity::DarkOnLight => "dark_on_light",
            imaging::Polarity::LightOnDark => "light_on_dark",
        }
    }

    fn normalized(&self) -> PyGrayImage {
        PyGrayImage(imaging::normalize_polarity(&self.0))
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.0.width(), self.0.height())
    }
}

/// Foreground mask as bytes (1 = ink), row-major. `threshold=None` uses Otsu.
#[pyfunction]
#[pyo3(signature = (image, threshold=None))]
fn binarize<'py>(
    py: Python<'py>,
    image: &PyGrayImage,
    threshold: Option<u8>,
) -> Bound<'py, PyBytes> {
    let bin = imaging::binarize(&image.0, policy(threshold));
    let mask: Vec<u8> = bin.mask().iter().map(|&b| u8::from(b)).collect();
    PyBytes::new(py, &mask)
}

#[pyfunction]
#[pyo3(signature = (image, threshold=None, connectivity=8))]
fn connected_components(
    image: &PyGrayImage,
    threshold: Option<u8>,
    connectivity: u8,
) -> PyResult<Vec<PyBBox>> {
    let bin = imaging::binarize(&image.0, policy(threshold));
    Ok(wrap(imaging::connected_components(
        &bin,
        self::connectivity(connectivity)?,
    )))
}

#[pyfunction]
fn merge_stage1(boxes: Vec<PyBBox>) -> Vec<PyBBox> {
    wrap(core_imnnb::merge_stage1(&unwrap(boxes)))
}

#[pyfunction]
#[pyo3(signature = (boxes, min_area=2000))]
fn filter_small(boxes: Vec<PyBBox>, min_area: u64) -> Vec<PyBBox> {
    wrap(core_imnnb::filter_small(&unwrap(boxes), min_area))
}

#[pyfunction]
#[pyo3(signature = (boxes, tau=150))]
fn merge_stage2(boxes: Vec<PyBBox>, tau: u32) -> Vec<PyBBox> {
    wrap(core_imnnb::merge_stage2(&unwrap(boxes), tau))
}

/// Glyph boxes of a slice image, top to bottom.
#[pyfunction]
#[pyo3(signature = (image, min_area=2000, tau=150))]
fn imnnb(image: &PyGrayImage, min_area: u64, tau: u32) -> Vec<PyBBox> {
    let bounds = image.0.bounds();
    let slice = evobc_core::Slice::new("slice", image.0.clone(), bounds);
    let params = ImnnbParams {
        min_area,
        tau,
        ..ImnnbParams::default()
    };
    core_imnnb::imnnb(&slice, &params)
        .into_iter()
        .map(|p| PyBBox(p.box_in_slice))
        .collect()
}

/// Column slices of a page, left to right, as page boxes.
#[pyfunction]
fn crop_slices(image: &PyGrayImage) -> Vec<PyBBox> {
    evobc_core::layout::crop_slices("page", &image.0, &LayoutSpec::default())
        .slices
        .into_iter()
        .map(|s| PyBBox(s.box_on_page))
        .collect()
}

fn parse_tags(source: &str, era: &str) -> PyResult<(SourceKind, Era)> {
    Ok((source.parse().map_err(err)?, era.parse().map_err(err)?))
}

#[pyfunction]
fn name_record(source: &str, era: &str, id: u64) -> PyResult<String> {
    let (s, e) = parse_tags(source, era)?;
    Ok(catalog::name_record(s, e, id))
}

#[pyfunction]
fn record_path(source: &str, era: &str, category: &str, id: u64) -> PyResult<String> {
    let (s, e) = parse_tags(source, era)?;
    catalog::record_path(s, e, category, id).map_err(err)
}

/// Canonical category using a tab-separated conversion table.
#[pyfunction]
#[pyo3(signature = (label, table_tsv=""))]
fn unify_category(label: &str, table_tsv: &str) -> PyResult<String> {
    let table = ConversionTable::parse_tsv(table_tsv).map_err(err)?;
    Ok(catalog::unify_category(label, &table))
}

/// Render a synthetic page. Returns the image and its ground truth as JSON.
#[pyfunction]
#[pyo3(signature = (spec_json="{}", name="page.png"))]
fn render_page(spec_json: &str, name: &str) -> PyResult<(PyGrayImage, String)> {
    let spec = PageSpec::from_json(spec_json).map_err(err)?;
    let page = synthgen::render_page(&spec, name).map_err(err)?;
    let truth = serde_json::to_string(&page.truth).expect("truth serializes");
    Ok((PyGrayImage(page.image), truth))
}

/// Manifest file contents, validated and re-serialized.
#[pyfunction]
fn read_manifest(path: PathBuf) -> PyResult<String> {
    catalog::read_manifest(&path)
        .and_then(|m| m.to_json())
        .map_err(err)
}

/// Split a manifest 9:1 per category; returns the record counts.
#[pyfunction]
fn split_manifest(
    path: PathBuf,
    seed: u64,
    train: PathBuf,
    val: PathBuf,
) -> PyResult<(usize, usize)> {
    let m = catalog::read_manifest(&path).map_err(err)?;
    let (t, v) = catalog::split(&m, seed);
    catalog::write_manifest(&t, &train).map_err(err)?;
    catalog::write_manifest(&v, &val).map_err(err)?;
    Ok((t.records.len(), v.records.len()))
}

#[pymodule]
fn evobc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyGrayImage>()?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(connected_components, m)?)?;
    m.add_function(wrap_pyfunction!(merge_stage1, m)?)?;
    m.add_function(wrap_pyfunction!(filter_small, m)?)?;
    m.add_function(wrap_pyfunction!(merge_stage2, m)?)?;
    m.add_function(wrap_pyfunction!(imnnb, m)?)?;
    m.add_function(wrap_pyfunction!(crop_slices, m)?)?;
    m.add_function(wrap_pyfunction!(name_record, m)?)?;
    m.add_function(wrap_pyfunction!(record_path, m)?)?;
    m.add_function(wrap_pyfunction!(unify_category, m)?)?;
    m.add_function(wrap_pyfunction!(render_page, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(split_manifest, m)?)?;
    Ok(())
}

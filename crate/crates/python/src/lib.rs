//! Python bindings: spectral features, parameter counts, metrics, trained
//! bundles and the command-line entry point.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sslnet::cli::{bundle_dataset, cmd_synth, load_manifest, RunConfig, SynthSpec};
use sslnet::dsp::{build_spectral_stack, AudioClip, Extractor as CoreExtractor, Grid, SpectralConfig};
use sslnet::fusion::Strategy;
use sslnet::trainer::{evaluate, Architecture, Metrics, ModelBundle, ModelConfig, Split};

create_exception!(sslnet_py, SslnetError, PyException);
create_exception!(sslnet_py, ConfigError, SslnetError);
create_exception!(sslnet_py, DataError, SslnetError);

fn to_py(e: sslnet::Error) -> PyErr {
    match e.exit_code() {
        1 => ConfigError::new_err(e.to_string()),
        2 => DataError::new_err(e.to_string()),
        _ => SslnetError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = sslnet::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn rows(grid: &Grid) -> Vec<Vec<f64>> {
    (0..grid.rows()).map(|r| grid.row(r).to_vec()).collect()
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("precision_macro", m.precision_macro)?;
    d.set_item("recall_macro", m.recall_macro)?;
    d.set_item("f1_macro", m.f1_macro)?;
    d.set_item("params", m.params)?;
    d.set_item("confusion", m.confusion.clone())?;
    Ok(d)
}

/// One-sided spectrum of a real frame whose length is a power of two.
#[pyfunction]
fn fft_real(frame: Vec<f64>) -> PyResult<Vec<Complex64>> {
    sslnet::dsp::fft_real(&frame).map_err(to_py)
}

/// Spectral front end for mono audio at the configured sample rate.
#[pyclass(module = "sslnet_py")]
struct Extractor {
    inner: CoreExtractor,
}

impl Extractor {
    fn clip(&self, samples: Vec<f64>) -> PyResult<AudioClip> {
        AudioClip::new(samples, self.inner.config().sample_rate, "python").map_err(to_py)
    }
}

#[pymethods]
impl Extractor {
    #[new]
    #[pyo3(signature = (sample_rate=22_050, n_fft=1024, hop_length=256, n_mels=64, n_mfcc=20, f_min=150.0, f_max=11_025.0, height=64, width=64))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        sample_rate: u32,
        n_fft: usize,
        hop_length: usize,
        n_mels: usize,
        n_mfcc: usize,
        f_min: f64,
        f_max: f64,
        height: usize,
        width: usize,
    ) -> PyResult<Self> {
        let cfg = SpectralConfig {
            sample_rate,
            n_fft,
            hop_length,
            n_mels,
            n_mfcc,
            f_min,
            f_max,
            height,
            width,
            ..SpectralConfig::default()
        };
        cfg.validate().map_err(to_py)?;
        Ok(Extractor {
            inner: CoreExtractor::new(&cfg).map_err(to_py)?,
        })
    }

    /// Log-mel energies as `n_mels` rows of frames.
    fn mel_spectrogram(&self, samples: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let clip = self.clip(samples)?;
        Ok(rows(&self.inner.mel_spectrogram(&clip).map_err(to_py)?))
    }

    /// MFCCs as `n_mfcc` rows of frames.
    fn mfcc(&self, samples: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let clip = self.clip(samples)?;
        Ok(rows(&self.inner.mfcc(&clip).map_err(to_py)?))
    }

    /// Unstandardised three-channel stack, nested as `[channel][row][col]`.
    fn stack(&self, samples: Vec<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let clip = self.clip(samples)?;
        let s = build_spectral_stack(&clip, self.inner.config(), None).map_err(to_py)?;
        Ok((0..3)
            .map(|c| s.channel(c).chunks(s.width()).map(<[f64]>::to_vec).collect())
            .collect())
    }
}

/// Trainable parameters of one fusion strategy at feature width `d`.
#[pyfunction]
fn fusion_param_count(strategy: &str, d: usize) -> PyResult<usize> {
    Ok(parse::<Strategy>(strategy)?.param_count(d))
}

/// Trainable parameters of the whole default model.
#[pyfunction]
#[pyo3(signature = (strategy, n_classes, d=128, height=64, width=64))]
fn model_param_count(strategy: &str, n_classes: usize, d: usize, height: usize, width: usize) -> PyResult<usize> {
    let cfg = ModelConfig {
        d,
        ..ModelConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    let strategy = parse::<Strategy>(strategy)?;
    Ok(Architecture::new(&cfg, strategy, height, width, n_classes).param_count())
}

/// Accuracy, macro precision/recall/F1 and the confusion matrix.
#[pyfunction]
#[pyo3(signature = (truth, predicted, n_classes, params=0))]
fn metrics<'py>(
    py: Python<'py>,
    truth: Vec<usize>,
    predicted: Vec<usize>,
    n_classes: usize,
    params: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = Metrics::from_predictions(&truth, &predicted, n_classes, params).map_err(to_py)?;
    metrics_dict(py, &m)
}

/// Writes a synthetic corpus (WAV files and `manifest.csv`) into `out`.
#[pyfunction]
#[pyo3(signature = (out, classes=5, clips_per_class=200, seed=0, snr=10.0, duration=3.0))]
fn synth(out: PathBuf, classes: usize, clips_per_class: usize, seed: u64, snr: f64, duration: f64) -> PyResult<usize> {
    let spec = SynthSpec {
        classes,
        clips_per_class,
        seed,
        snr,
        duration,
        ..SynthSpec::default()
    };
    let manifest = cmd_synth(&spec, &out).map_err(to_py)?;
    Ok(manifest.records().len())
}

/// A trained model bundle.
#[pyclass(module = "sslnet_py", frozen)]
struct Model {
    inner: ModelBundle,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: ModelBundle::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.header.architecture.strategy.name()
    }

    #[getter]
    fn branch(&self) -> &'static str {
        self.inner.header.architecture.branch.name()
    }

    #[getter]
    fn vocabulary(&self) -> Vec<String> {
        self.inner.header.vocabulary.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.header.seed
    }

    /// Scores one split of the data named by a run configuration file.
    #[pyo3(signature = (config, split="test"))]
    fn evaluate<'py>(&self, py: Python<'py>, config: PathBuf, split: &str) -> PyResult<Bound<'py, PyDict>> {
        let split: Split = parse(split)?;
        let cfg = RunConfig::load(&config).map_err(to_py)?;
        let manifest = load_manifest(&cfg).map_err(to_py)?;
        let data = bundle_dataset(&cfg, &self.inner, &manifest).map_err(to_py)?;
        let m = evaluate(&self.inner, &data, split).map_err(to_py)?;
        metrics_dict(py, &m)
    }

    /// Predicted labels, in manifest order, for one split.
    #[pyo3(signature = (config, split="test"))]
    fn predict(&self, config: PathBuf, split: &str) -> PyResult<Vec<(String, String)>> {
        let split: Split = parse(split)?;
        let cfg = RunConfig::load(&config).map_err(to_py)?;
        let manifest = load_manifest(&cfg).map_err(to_py)?;
        let data = bundle_dataset(&cfg, &self.inner, &manifest).map_err(to_py)?;
        let idx = data.indices(split);
        let predicted = self.inner.predict(&data, &idx).map_err(to_py)?;
        let vocab = &self.inner.header.vocabulary;
        Ok(idx
            .iter()
            .zip(predicted)
            .map(|(&i, p)| (data.examples[i].id.clone(), vocab[p].clone()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(strategy={:?}, classes={}, params={})",
            self.strategy(),
            self.inner.header.vocabulary.len(),
            self.param_count()
        )
    }
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn main(args: Vec<String>) -> i32 {
    sslnet::cli::main_with_args(std::iter::once("sslnet".to_string()).chain(args))
}

#[pymodule]
fn sslnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SslnetError", m.py().get_type::<SslnetError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add_class::<Extractor>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(fft_real, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(model_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}

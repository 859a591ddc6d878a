//! Python bindings over the core library: synthesis, segmentation,
//! features, the embedding network, and clustering metrics. Audio and
//! feature maps cross the boundary as plain lists.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use uvector::audio::{NoiseKind, SAMPLE_RATE};
use uvector::config::ExperimentConfig;
use uvector::embedder::{load_checkpoint, NetConfig, Network};
use uvector::features::{FeatureConfig, FeatureMap};

fn to_py(e: uvector::Error) -> PyErr {
    match &e {
        uvector::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn map_from_rows(rows: Vec<Vec<f64>>) -> PyResult<FeatureMap> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, |r| r.len());
    if n_rows == 0 || n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
        return Err(PyValueError::new_err("feature map must be rectangular and non-empty"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((n_rows, n_cols), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(FeatureMap { data })
}

/// Synthesize one utterance for speaker `speaker` out of a bank of
/// `n_speakers` voices; returns 16 kHz samples.
#[pyfunction]
fn synth_utterance(
    n_speakers: usize,
    speaker: usize,
    master_seed: u64,
    duration_s: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    if speaker >= n_speakers {
        return Err(PyValueError::new_err(format!(
            "speaker {speaker} out of range for {n_speakers} voices"
        )));
    }
    let profiles = uvector::audio::generate_profiles(n_speakers, master_seed);
    let buf = uvector::audio::synth_utterance(&profiles[speaker], duration_s, seed).map_err(to_py)?;
    Ok(buf.samples)
}

/// Generate a noise buffer; `kind` is "white", "pink", or "babble".
#[pyfunction]
fn gen_noise(kind: &str, duration_s: f64, seed: u64) -> PyResult<Vec<f64>> {
    let kind: NoiseKind = kind.parse().map_err(to_py)?;
    Ok(uvector::audio::gen_noise(kind, duration_s, seed).map_err(to_py)?.samples)
}

/// Voice-activity detection: returns (start_s, duration_s) per segment.
#[pyfunction]
fn vad_segments(
    samples: Vec<f64>,
    threshold_db: f64,
    segment_len_s: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let buf = uvector::audio::AudioBuffer { samples, sample_rate: SAMPLE_RATE };
    let segs = uvector::segmentation::vad_segment(&buf, threshold_db, segment_len_s).map_err(to_py)?;
    Ok(segs.into_iter().map(|s| (s.start, s.duration)).collect())
}

/// Log-mel features with the default analysis settings; rows are mel
/// bands, columns analysis steps.
#[pyfunction]
fn featurize(samples: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let cfg = FeatureConfig::default();
    let fm = uvector::features::featurize(&samples, &cfg).map_err(to_py)?;
    Ok(fm.data.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Feature-map shape (n_mels, n_steps) produced for an input of
/// `n_samples` samples under the default analysis settings.
#[pyfunction]
fn feature_shape(n_samples: usize) -> (usize, usize) {
    let cfg = FeatureConfig::default();
    (cfg.n_mels, cfg.n_steps(n_samples))
}

/// Identity on [0, alpha], clamped outside.
#[pyfunction]
fn thresholded_relu(x: f64, alpha: f64) -> f64 {
    uvector::embedder::thresholded_relu(x, alpha)
}

/// Blend a frame toward noise: x*(1-thres) + noise*thres.
#[pyfunction]
fn augment(x: Vec<f64>, noise: Vec<f64>, thres: f64) -> PyResult<Vec<f64>> {
    uvector::constraints::augment(&x, &noise, thres).map_err(to_py)
}

/// Cluster row vectors into k groups; returns one assignment per row.
#[pyfunction]
fn kmeans(data: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Vec<u32>> {
    let m = map_from_rows(data)?;
    Ok(uvector::eval::kmeans(&m.data, k, seed).map_err(to_py)?.assignments)
}

/// (accuracy, nmi, ari) of a predicted labeling against a reference.
#[pyfunction]
fn cluster_scores(pred: Vec<u32>, truth: Vec<u32>) -> PyResult<(f64, f64, f64)> {
    let s = uvector::eval::cluster_scores(&pred, &truth).map_err(to_py)?;
    Ok((s.acc, s.nmi, s.ari))
}

/// Convolutional embedding network over log-mel frames.
#[pyclass]
struct Embedder {
    net: Network,
}

#[pymethods]
impl Embedder {
    /// Fresh default-architecture network for (n_mels, n_steps) inputs.
    #[new]
    fn new(n_mels: usize, n_steps: usize, seed: u64) -> PyResult<Self> {
        let cfg = NetConfig { input: (n_mels, n_steps), ..NetConfig::default() };
        Ok(Self { net: Network::new(&cfg, seed).map_err(to_py)? })
    }

    /// Load the network stored in a training checkpoint.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (net, _) = load_checkpoint(path).map_err(to_py)?;
        Ok(Self { net })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.net.embed_dim()
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        self.net.config().input
    }

    /// Embed one feature map.
    fn embed(&self, feature_map: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let fm = map_from_rows(feature_map)?;
        self.net.forward(&fm).map_err(to_py)
    }

    /// Clamped embedding distance between two feature maps.
    fn distance(&self, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, alpha: f64) -> PyResult<f64> {
        let (a, b) = (map_from_rows(a)?, map_from_rows(b)?);
        uvector::embedder::siamese_distance(&self.net, &a, &b, alpha).map_err(to_py)
    }
}

/// Default experiment configuration rendered as TOML, for inspection
/// from Python.
#[pyfunction]
fn default_config_toml() -> PyResult<String> {
    toml::to_string_pretty(&ExperimentConfig::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn uvector_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SAMPLE_RATE", SAMPLE_RATE)?;
    m.add_function(wrap_pyfunction!(synth_utterance, m)?)?;
    m.add_function(wrap_pyfunction!(gen_noise, m)?)?;
    m.add_function(wrap_pyfunction!(vad_segments, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(feature_shape, m)?)?;
    m.add_function(wrap_pyfunction!(thresholded_relu, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_scores, m)?)?;
    m.add_function(wrap_pyfunction!(default_config_toml, m)?)?;
    m.add_class::<Embedder>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_feature_maps() {
        assert!(map_from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(map_from_rows(vec![]).is_err());
        assert!(map_from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).is_ok());
    }
}

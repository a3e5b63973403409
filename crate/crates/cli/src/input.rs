use std::fs;
use std::path::Path;

use ctxfuse_core::audio::Waveform;
use ctxfuse_core::calibration::PredictionSet;
use ctxfuse_core::Matrix;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Usage(format!("{}: malformed CSV: {other:?}", path.display())),
    }
}

/// Numeric CSV rows. A first row that does not parse is taken as a header.
pub fn read_numeric_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(CliError::Usage(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

pub fn read_points(path: &Path) -> CliResult<Matrix> {
    let rows = read_numeric_csv(path)?;
    Matrix::from_rows(&rows).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Rows of `(prob_class0, prob_class1, label)`.
pub fn read_predictions(path: &Path) -> CliResult<PredictionSet> {
    let rows = read_numeric_csv(path)?;
    let mut probs = Vec::with_capacity(rows.len() * 2);
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 3 {
            return Err(CliError::Usage(format!(
                "{}: row {} has {} columns, expected prob_class0, prob_class1, label",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        let label = row[2];
        if label != 0.0 && label != 1.0 {
            return Err(CliError::Usage(format!("{}: row {} has label {label}", path.display(), i + 1)));
        }
        probs.extend_from_slice(&row[..2]);
        labels.push(label as usize);
    }
    Ok(PredictionSet::new(Matrix::from_vec(labels.len(), 2, probs)?, labels)?)
}

/// One score per non-empty line.
pub fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// 16-bit PCM or 32-bit float WAV, downmixed to mono by averaging channels.
pub fn read_wav(path: &Path) -> CliResult<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (format, bits) => {
            return Err(CliError::Usage(format!(
                "{}: unsupported sample format {format:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform::new(mono, spec.sample_rate)?)
}

fn wav_error(path: &Path, e: hound::Error) -> CliError {
    match e {
        hound::Error::IoError(io) => CliError::io(path, io),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    }
}

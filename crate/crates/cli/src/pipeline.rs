//! Encoder training, decoder fitting and the per-query search loop shared by
//! the drivers and subcommands.

use log::info;
use qdec_core::decoders::{
    aq_fit, binary_naive_decode, default_lambda, topline_fit, ToplineDecoder,
};
use qdec_core::encoders::{itq_train, opq_train_with, pq_train, OpqConfig};
use qdec_core::nn::{train_decoder, HistoryRow, TrainConfig};
use qdec_core::search::{adc_scan_decoded, adc_scan_pq, sdc_scan_binary, search_all, SearchResult};
use qdec_core::serialize::Model;
use qdec_core::{CodeArray, Decoder, DecoderLut, DenseMatrix, ItqModel, NnDecoder, PqModel};

use crate::config::{DecoderKind, EncoderKind, ExperimentConfig};
use crate::error::{config_err, Result};

/// A trained, frozen encoder.
#[derive(Debug, Clone)]
pub enum EncoderModel {
    /// PQ, OPQ, or k-means as `PQ1×b`.
    Pq(PqModel),
    Itq(ItqModel),
}

impl EncoderModel {
    pub fn train(cfg: &ExperimentConfig, x: &DenseMatrix, seed: u64) -> Result<Self> {
        info!(
            "training {} on {} vectors (seed {seed})",
            cfg.encoder_label(),
            x.rows()
        );
        Ok(match cfg.encoder {
            EncoderKind::KMeans => Self::Pq(pq_train(x, 1, cfg.bits, cfg.kmeans_iters, seed)?),
            EncoderKind::Pq => Self::Pq(pq_train(x, cfg.m, cfg.bits, cfg.kmeans_iters, seed)?),
            EncoderKind::Opq => {
                let opq = OpqConfig {
                    outer_iters: cfg.opq_iters,
                    kmeans_iters: cfg.kmeans_iters,
                    ..OpqConfig::default()
                };
                Self::Pq(opq_train_with(x, cfg.m, cfg.bits, &opq, seed)?.model)
            }
            EncoderKind::Itq => Self::Itq(itq_train(x, cfg.m, cfg.itq_iters, seed)?),
        })
    }

    pub fn encode(&self, x: &DenseMatrix) -> Result<CodeArray> {
        Ok(match self {
            Self::Pq(p) => p.encode(x)?,
            Self::Itq(t) => t.encode(x)?,
        })
    }

    /// The encoder's own reconstruction.
    pub fn natural(&self) -> &dyn Decoder {
        match self {
            Self::Pq(p) => p,
            Self::Itq(t) => t,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Self::Itq(_))
    }

    pub fn to_model(&self) -> Model {
        match self {
            Self::Pq(p) => Model::Pq(p.clone()),
            Self::Itq(t) => Model::Itq(t.clone()),
        }
    }

    pub fn from_model(model: Model) -> Result<Self> {
        match model {
            Model::Pq(p) => Ok(Self::Pq(p)),
            Model::Itq(t) => Ok(Self::Itq(t)),
            other => Err(config_err(format!(
                "a {} model is not an encoder",
                other.kind_name()
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedDecoder {
    Natural,
    Topline(ToplineDecoder),
    Aq(DecoderLut),
    Nn(NnDecoder<f32>),
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub decoder: FittedDecoder,
    /// Loss curve, for the neural decoder only.
    pub history: Vec<HistoryRow>,
}

impl FittedDecoder {
    pub fn as_decoder<'a>(&'a self, enc: &'a EncoderModel) -> &'a dyn Decoder {
        match self {
            Self::Natural => enc.natural(),
            Self::Topline(t) => t,
            Self::Aq(l) => l,
            Self::Nn(n) => n,
        }
    }

    pub fn to_model(&self, enc: &EncoderModel) -> Model {
        match self {
            Self::Natural => enc.to_model(),
            Self::Topline(t) => Model::Topline(t.clone()),
            Self::Aq(l) => Model::DecoderLut(l.clone()),
            Self::Nn(n) => Model::Nn(n.clone()),
        }
    }
}

/// Training data for a decoder fit: codes and vectors, plus a validation
/// split for the neural decoder.
pub struct FitData<'a> {
    pub codes_train: &'a CodeArray,
    pub x_train: &'a DenseMatrix,
    pub codes_val: &'a CodeArray,
    pub x_val: &'a DenseMatrix,
}

pub fn fit_decoder(
    kind: DecoderKind,
    enc: &EncoderModel,
    data: &FitData<'_>,
    aq_lambda: Option<f64>,
    train: &TrainConfig,
) -> Result<Fit> {
    let decoder = match kind {
        DecoderKind::Natural => FittedDecoder::Natural,
        // unseen codes fall back to the encoder's own reconstruction
        DecoderKind::Topline => FittedDecoder::Topline(topline_fit(
            data.codes_train,
            data.x_train,
            Some(enc.natural()),
        )?),
        DecoderKind::Aq => {
            let lambda = aq_lambda.unwrap_or_else(|| default_lambda(data.codes_train));
            FittedDecoder::Aq(aq_fit(data.codes_train, data.x_train, lambda)?)
        }
        DecoderKind::Nn => {
            let out = train_decoder(
                data.codes_train,
                data.x_train,
                data.codes_val,
                data.x_val,
                train,
            )?;
            if let Some(e) = out.diverged_at {
                log::warn!("decoder training stopped at epoch {e}: non-finite loss");
            }
            return Ok(Fit {
                decoder: FittedDecoder::Nn(out.decoder),
                history: out.history,
            });
        }
    };
    Ok(Fit {
        decoder,
        history: Vec::new(),
    })
}

/// How distances are estimated during the scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    /// Raw query against reconstructions (LUT scan for the natural PQ decoder).
    Adc,
    /// Hamming distance between binary codes.
    Sdc,
}

impl ScanMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adc => "adc",
            Self::Sdc => "sdc",
        }
    }
}

/// A ready-to-run first-stage scan over the database codes.
pub enum Scanner<'a> {
    PqLut {
        model: &'a PqModel,
        codes: &'a CodeArray,
    },
    Hamming {
        query_codes: CodeArray,
        codes: &'a CodeArray,
    },
    Explicit {
        recons: DenseMatrix,
    },
}

impl<'a> Scanner<'a> {
    /// Reconstructions needed by the explicit scan are decoded here, once,
    /// outside any timed region.
    pub fn new(
        enc: &'a EncoderModel,
        fitted: &FittedDecoder,
        mode: ScanMode,
        codes: &'a CodeArray,
        queries: &DenseMatrix,
    ) -> Result<Self> {
        Ok(match (mode, fitted, enc) {
            (ScanMode::Sdc, FittedDecoder::Natural, EncoderModel::Itq(_)) => Self::Hamming {
                query_codes: enc.encode(queries)?,
                codes,
            },
            (ScanMode::Sdc, _, _) => {
                return Err(config_err(
                    "symmetric search needs binary codes and their natural decoder",
                ))
            }
            (ScanMode::Adc, FittedDecoder::Natural, EncoderModel::Pq(model)) => {
                Self::PqLut { model, codes }
            }
            (ScanMode::Adc, FittedDecoder::Natural, EncoderModel::Itq(t)) => Self::Explicit {
                recons: binary_naive_decode(t, codes)?,
            },
            (ScanMode::Adc, f, _) => Self::Explicit {
                recons: f.as_decoder(enc).decode(codes)?,
            },
        })
    }

    pub fn scan(&self, q: usize, query: &[f32], r: usize) -> qdec_core::Result<SearchResult> {
        match self {
            Self::PqLut { model, codes } => adc_scan_pq(query, model, codes, r),
            Self::Hamming { query_codes, codes } => sdc_scan_binary(query_codes.code(q), codes, r),
            Self::Explicit { recons } => adc_scan_decoded(query, recons, r),
        }
    }

    pub fn scan_all(
        &self,
        queries: &DenseMatrix,
        r: usize,
        parallel: bool,
    ) -> qdec_core::Result<Vec<SearchResult>> {
        search_all(queries, parallel, |q, v| self.scan(q, v, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qdec_core::synthetic::gaussian;

    fn cfg(over: &[&str]) -> ExperimentConfig {
        ExperimentConfig::load(None, over).unwrap()
    }

    #[test]
    fn lut_scan_matches_explicit_scan_of_natural_decode() {
        let x = gaussian(2000, 8, 1);
        let q = gaussian(10, 8, 2);
        let enc = EncoderModel::train(&cfg(&["m=4", "bits=4", "kmeans_iters=5"]), &x, 0).unwrap();
        let codes = enc.encode(&x).unwrap();
        let lut = Scanner::new(&enc, &FittedDecoder::Natural, ScanMode::Adc, &codes, &q).unwrap();
        let recons = enc.natural().decode(&codes).unwrap();
        let explicit = Scanner::Explicit { recons };
        for i in 0..q.rows() {
            let a = lut.scan(i, q.row(i), 20).unwrap();
            let b = explicit.scan(i, q.row(i), 20).unwrap();
            for (da, db) in a.dists.iter().zip(&b.dists) {
                assert!((da - db).abs() <= 1e-5 * db.max(1.0));
            }
        }
        assert!(Scanner::new(&enc, &FittedDecoder::Natural, ScanMode::Sdc, &codes, &q).is_err());
    }

    #[test]
    fn kmeans_is_single_subquantizer() {
        let x = gaussian(500, 4, 3);
        let enc = EncoderModel::train(
            &cfg(&["encoder=kmeans", "m=1", "bits=4", "kmeans_iters=3"]),
            &x,
            0,
        )
        .unwrap();
        let codes = enc.encode(&x).unwrap();
        assert_eq!((codes.m(), codes.bits()), (1, 4));
    }

    #[test]
    fn itq_sdc_scan_ranks_by_hamming() {
        let x = gaussian(600, 16, 4);
        let enc = EncoderModel::train(
            &cfg(&["encoder=itq", "m=8", "bits=1", "itq_iters=5"]),
            &x,
            0,
        )
        .unwrap();
        let codes = enc.encode(&x).unwrap();
        let q = x.slice_rows(0..3);
        let s = Scanner::new(&enc, &FittedDecoder::Natural, ScanMode::Sdc, &codes, &q).unwrap();
        let res = s.scan_all(&q, 5, false).unwrap();
        for r in &res {
            assert_eq!(r.dists[0], 0.0);
        }
    }
}

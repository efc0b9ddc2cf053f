//! End-to-end experiment drivers. Each writes fixed-schema CSV files into
//! the configured output directory and returns the same rows.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use qdec_core::decoders::topline_fit;
use qdec_core::encoders::pq_train;
use qdec_core::nn::{train_decoder, write_history_csv, HistoryRow, TrainConfig};
use qdec_core::search::{
    median_ms, recall_at, rerank, write_results_csv, write_summary_csv, DecodedCodes, SummaryRow,
};

use crate::config::{DecoderKind, EncoderKind, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{config_err, Result};
use crate::pipeline::{fit_decoder, EncoderModel, FitData, ScanMode, Scanner};
use crate::schema;

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Codes of every split under one trained encoder.
struct Encoded {
    enc: EncoderModel,
    train: qdec_core::CodeArray,
    val: qdec_core::CodeArray,
    base: qdec_core::CodeArray,
}

fn encode_splits(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<Encoded> {
    let enc = EncoderModel::train(cfg, &ds.train, seed)?;
    Ok(Encoded {
        train: enc.encode(&ds.train)?,
        val: enc.encode(&ds.val)?,
        base: enc.encode(&ds.base)?,
        enc,
    })
}

impl Encoded {
    fn fit_data<'a>(&'a self, ds: &'a Dataset) -> FitData<'a> {
        FitData {
            codes_train: &self.train,
            x_train: &ds.train,
            codes_val: &self.val,
            x_val: &ds.val,
        }
    }
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train.clone()
    }
}

fn max_r(cfg: &ExperimentConfig) -> usize {
    cfg.recall_at.iter().copied().max().unwrap_or(1)
}

/// Recall at each listed rank.
fn recalls(
    results: &[qdec_core::search::SearchResult],
    gt: &[u32],
    rs: &[usize],
) -> Result<Vec<f64>> {
    rs.iter().map(|&r| Ok(recall_at(results, gt, r)?)).collect()
}

/// One scan configuration measured over all seeds.
#[derive(Debug, Default)]
struct Acc {
    recalls: Vec<Vec<f64>>,
    scan_ms: Vec<f64>,
    rerank_ms: Vec<f64>,
}

impl Acc {
    fn rows(&self, config: &str, rs: &[usize]) -> Vec<SummaryRow> {
        let scan = mean_std(&self.scan_ms).0;
        let rer = if self.rerank_ms.is_empty() {
            0.0
        } else {
            mean_std(&self.rerank_ms).0
        };
        rs.iter()
            .enumerate()
            .map(|(i, &r)| {
                let v: Vec<f64> = self.recalls.iter().map(|s| s[i]).collect();
                let (recall, recall_std) = mean_std(&v);
                SummaryRow {
                    config: config.to_string(),
                    r,
                    recall,
                    recall_std,
                    scan_ms: scan,
                    rerank_ms: rer,
                }
            })
            .collect()
    }
}

pub fn config_label(cfg: &ExperimentConfig, dec: DecoderKind, mode: ScanMode) -> String {
    format!("{}_{dec}_{}", cfg.encoder_label(), mode.name())
}

/// Trains the encoder once per seed, fits every requested decoder on the
/// same codes, and scans all queries. Binary codes with the natural decoder
/// are searched both symmetrically and asymmetrically. Times are
/// milliseconds per query.
pub fn run_recall_experiment(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<SummaryRow>> {
    let rs = &cfg.recall_at;
    let r = max_r(cfg);
    let nq = ds.query.rows() as f64;
    let mut labels: Vec<(String, DecoderKind, ScanMode)> = Vec::new();
    for &dec in &cfg.decoders {
        if dec == DecoderKind::Natural && cfg.encoder == EncoderKind::Itq {
            labels.push((config_label(cfg, dec, ScanMode::Sdc), dec, ScanMode::Sdc));
        }
        labels.push((config_label(cfg, dec, ScanMode::Adc), dec, ScanMode::Adc));
    }
    let mut accs: Vec<Acc> = labels.iter().map(|_| Acc::default()).collect();
    let summary_path = cfg.output_dir.join("recall_summary.csv");

    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let e = encode_splits(cfg, ds, seed)?;
        let train = seeded(&cfg.train, seed);
        let mut fitted = Vec::new();
        for &dec in &cfg.decoders {
            fitted.push((
                dec,
                fit_decoder(dec, &e.enc, &e.fit_data(ds), cfg.aq_lambda, &train)?,
            ));
        }
        for ((label, dec, mode), acc) in labels.iter().zip(accs.iter_mut()) {
            let fit = &fitted.iter().find(|(d, _)| d == dec).unwrap().1;
            let scanner = Scanner::new(&e.enc, &fit.decoder, *mode, &e.base, &ds.query)?;
            let (ms, results) = median_ms(cfg.timing_reps, || {
                scanner.scan_all(&ds.query, r, cfg.parallel)
            })?;
            let rec = recalls(&results, &ds.gt, rs)?;
            info!(
                "seed {seed} {label}: recall {rec:?}, {:.3} ms/query",
                ms / nq
            );
            if si == 0 {
                write_results_csv(
                    create(&cfg.output_dir, &format!("results_{label}.csv"))?,
                    &results,
                )?;
            }
            acc.recalls.push(rec);
            acc.scan_ms.push(ms / nq);
        }
        // flush what is known so far
        let rows: Vec<SummaryRow> = labels
            .iter()
            .zip(&accs)
            .flat_map(|((label, _, _), a)| a.rows(label, rs))
            .collect();
        write_summary_csv(create(&cfg.output_dir, "recall_summary.csv")?, &rows)?;
    }
    let rows: Vec<SummaryRow> = labels
        .iter()
        .zip(&accs)
        .flat_map(|((label, _, _), a)| a.rows(label, rs))
        .collect();
    schema::SUMMARY.check_file(&summary_path)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: String,
    /// Shortlist size; 0 is the first stage alone.
    pub l: usize,
    pub r: usize,
    pub recall: f64,
    pub recall_std: f64,
    pub scan_ms: f64,
    pub rerank_ms: f64,
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{}", schema::SWEEP.header())?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.4},{:.4}",
            row.config, row.l, row.r, row.recall, row.recall_std, row.scan_ms, row.rerank_ms
        )?;
    }
    Ok(())
}

/// First-stage scan with `first_stage`, then re-ranking of the top `L` by
/// `strong`, for every `L` in the shortlist grid. Reconstructions of the
/// shortlist are decoded inside the timed re-ranking.
pub fn run_rerank_sweep(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<SweepRow>> {
    let rs = &cfg.recall_at;
    let lmax = cfg.shortlist.iter().copied().max().unwrap_or(0);
    let r_first = lmax.max(max_r(cfg));
    let nq = ds.query.rows() as f64;
    let mut base = Acc::default();
    let mut per_l: Vec<Acc> = cfg.shortlist.iter().map(|_| Acc::default()).collect();

    for &seed in &cfg.seeds {
        let e = encode_splits(cfg, ds, seed)?;
        let train = seeded(&cfg.train, seed);
        let data = e.fit_data(ds);
        let first = fit_decoder(cfg.first_stage, &e.enc, &data, cfg.aq_lambda, &train)?;
        let strong = fit_decoder(cfg.strong, &e.enc, &data, cfg.aq_lambda, &train)?;
        let scanner = Scanner::new(&e.enc, &first.decoder, ScanMode::Adc, &e.base, &ds.query)?;
        let (scan_ms, shortlist) = median_ms(cfg.timing_reps, || {
            scanner.scan_all(&ds.query, r_first, cfg.parallel)
        })?;
        let scan_ms = scan_ms / nq;
        base.recalls.push(recalls(&shortlist, &ds.gt, rs)?);
        base.scan_ms.push(scan_ms);

        let recons = DecodedCodes {
            decoder: strong.decoder.as_decoder(&e.enc),
            codes: &e.base,
        };
        for (&l, acc) in cfg.shortlist.iter().zip(per_l.iter_mut()) {
            let (ms, reranked) = median_ms(cfg.timing_reps, || {
                qdec_core::search::search_all(&ds.query, cfg.parallel, |q, v| {
                    rerank(v, &shortlist[q], &recons, l)
                })
            })?;
            let rec = recalls(&reranked, &ds.gt, rs)?;
            info!(
                "seed {seed} L={l}: recall {rec:?}, rerank {:.4} ms/query",
                ms / nq
            );
            acc.recalls.push(rec);
            acc.scan_ms.push(scan_ms);
            acc.rerank_ms.push(ms / nq);
        }
    }

    let label = format!("{}_{}_{}", cfg.encoder_label(), cfg.first_stage, cfg.strong);
    let mut rows = Vec::new();
    let mut push = |l: usize, acc: &Acc| {
        for s in acc.rows(&label, rs) {
            rows.push(SweepRow {
                config: s.config,
                l,
                r: s.r,
                recall: s.recall,
                recall_std: s.recall_std,
                scan_ms: s.scan_ms,
                rerank_ms: s.rerank_ms,
            });
        }
    };
    push(0, &base);
    for (&l, acc) in cfg.shortlist.iter().zip(&per_l) {
        push(l, acc);
    }
    write_sweep_csv(create(&cfg.output_dir, "rerank_sweep.csv")?, &rows)?;
    schema::SWEEP.check_file(&cfg.output_dir.join("rerank_sweep.csv"))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrelimRow {
    pub ntrain: usize,
    pub encoder: String,
    pub decoder: DecoderKind,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Training-set sizes of the grid that fit in the pool.
pub fn capped_grid(grid: &[usize], pool: usize) -> Result<Vec<usize>> {
    let kept: Vec<usize> = grid.iter().copied().filter(|&n| n <= pool).collect();
    if kept.is_empty() {
        return Err(config_err(format!(
            "no training size of {grid:?} fits a pool of {pool} vectors"
        )));
    }
    Ok(kept)
}

/// Reconstruction MSE against training-set size for 16-bit codes:
/// k-means with 2^16 centroids, PQ2×8 and PQ4×4, each decoded by every
/// decoder in the configuration (natural, topline, NN). Uses the first seed.
pub fn run_preliminary_experiment(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<PrelimRow>> {
    let grid = capped_grid(&cfg.ntrain_grid, ds.train.rows())?;
    let seed = cfg.seeds[0];
    let train_cfg = seeded(&cfg.train, seed);
    let mut encoders: Vec<(usize, u32)> = Vec::new();
    if cfg.prelim_kmeans {
        encoders.push((1, 16));
    }
    encoders.extend([(2, 8), (4, 4)]);
    let path = cfg.output_dir.join("prelim.csv");
    let mut rows = Vec::new();

    for &n in &grid {
        let x = ds.train.slice_rows(0..n);
        for &(m, bits) in &encoders {
            let label = if m == 1 {
                format!("kmeans{}", 1u64 << bits)
            } else {
                format!("pq{m}x{bits}")
            };
            if n < 1 << bits {
                warn!("{label}: {n} training vectors cannot seed 2^{bits} centroids; skipped");
                continue;
            }
            info!("prelim: {label} on {n} vectors");
            let pq = pq_train(&x, m, bits, cfg.kmeans_iters, seed)?;
            let enc = EncoderModel::Pq(pq);
            let codes = enc.encode(&x)?;
            let codes_val = enc.encode(&ds.val)?;
            let data = FitData {
                codes_train: &codes,
                x_train: &x,
                codes_val: &codes_val,
                x_val: &ds.val,
            };
            for &dec in &cfg.decoders {
                let fit = match dec {
                    // a single 2^16 table has more LUT columns than the
                    // closed-form initialization supports, and with one
                    // subquantizer natural, topline and AQ coincide anyway
                    DecoderKind::Nn | DecoderKind::Aq if m == 1 => continue,
                    DecoderKind::Nn if n < train_cfg.batch_size => continue,
                    DecoderKind::Topline => {
                        let t = topline_fit(&codes, &x, Some(enc.natural()))?;
                        crate::pipeline::Fit {
                            decoder: crate::pipeline::FittedDecoder::Topline(t),
                            history: Vec::new(),
                        }
                    }
                    _ => fit_decoder(dec, &enc, &data, cfg.aq_lambda, &train_cfg)?,
                };
                let d = fit.decoder.as_decoder(&enc);
                let row = PrelimRow {
                    ntrain: n,
                    encoder: label.clone(),
                    decoder: dec,
                    train_mse: d.decode(&codes)?.mse(&x)?,
                    val_mse: d.decode(&codes_val)?.mse(&ds.val)?,
                };
                info!("  {dec}: train {:.5} val {:.5}", row.train_mse, row.val_mse);
                rows.push(row);
            }
            write_prelim_csv(create(&cfg.output_dir, "prelim.csv")?, &rows)?;
        }
    }
    write_prelim_csv(create(&cfg.output_dir, "prelim.csv")?, &rows)?;
    schema::PRELIM.check_file(&path)?;
    Ok(rows)
}

pub fn write_prelim_csv<W: Write>(mut w: W, rows: &[PrelimRow]) -> std::io::Result<()> {
    writeln!(w, "{}", schema::PRELIM.header())?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.9e},{:.9e}",
            r.ntrain, r.encoder, r.decoder, r.train_mse, r.val_mse
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub factor: String,
    pub value: String,
    pub history: Vec<HistoryRow>,
    pub natural_val_mse: f64,
    /// First logged epoch (0 is the initialization) whose validation MSE is
    /// below the natural decoder's.
    pub epochs_to_beat_natural: Option<usize>,
    pub diverged_at: Option<usize>,
}

impl SensitivityRow {
    pub fn last(&self) -> &HistoryRow {
        self.history
            .last()
            .expect("history starts with the initialization")
    }

    pub fn best_val(&self) -> f64 {
        self.history
            .iter()
            .map(|h| h.val_mse)
            .fold(f64::INFINITY, f64::min)
    }
}

type Variant = (String, String, TrainConfig);

fn variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let base = &cfg.train;
    let mut out: Vec<Variant> = vec![("default".into(), "-".into(), base.clone())];
    let mut add = |factor: &str, value: String, f: &dyn Fn(&mut TrainConfig)| {
        let mut t = base.clone();
        f(&mut t);
        out.push((factor.to_string(), value, t));
    };
    for &h in &cfg.grid_hidden {
        add("hidden", h.to_string(), &|t| t.hidden = Some(h));
    }
    for &b in &cfg.grid_blocks {
        add("blocks", b.to_string(), &|t| t.blocks = b);
    }
    for &lr in &cfg.grid_lr {
        add("lr", format!("{lr:e}"), &|t| t.lr = lr);
    }
    for &o in &cfg.grid_optimizer {
        add("optimizer", o.to_string(), &|t: &mut TrainConfig| {
            t.optimizer = o
        });
    }
    for &b in &cfg.grid_batch_size {
        add("batch_size", b.to_string(), &|t| t.batch_size = b);
    }
    for &d in &cfg.grid_lr_decay {
        add("lr_decay", d.to_string(), &|t| t.lr_decay = d);
    }
    for &w in &cfg.grid_weight_decay {
        add("weight_decay", format!("{w:e}"), &|t| t.weight_decay = w);
    }
    out
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// One-factor-at-a-time sweep around the configured training settings, on
/// codes from one encoder trained with the first seed. Writes one loss curve
/// per grid point under `sensitivity/` and a summary table.
pub fn run_sensitivity_sweep(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<SensitivityRow>> {
    let seed = cfg.seeds[0];
    let e = encode_splits(cfg, ds, seed)?;
    let natural_val_mse = e.enc.natural().decode(&e.val)?.mse(&ds.val)?;
    info!("natural decoder validation MSE {natural_val_mse:.6}");
    let dir: PathBuf = cfg.output_dir.join("sensitivity");
    let mut rows = Vec::new();
    for (factor, value, t) in variants(cfg) {
        let t = seeded(&t, seed);
        info!("sensitivity: {factor} = {value}");
        let out = train_decoder(&e.train, &ds.train, &e.val, &ds.val, &t)?;
        let name = format!("loss_{}_{}.csv", file_safe(&factor), file_safe(&value));
        write_history_csv(create(&dir, &name)?, &out.history)?;
        schema::HISTORY.check_file(&dir.join(&name))?;
        let epochs_to_beat_natural = out
            .history
            .iter()
            .find(|h| h.val_mse < natural_val_mse)
            .map(|h| h.epoch);
        rows.push(SensitivityRow {
            factor,
            value,
            history: out.history,
            natural_val_mse,
            epochs_to_beat_natural,
            diverged_at: out.diverged_at,
        });
        write_sensitivity_csv(create(&dir, "summary.csv")?, &rows)?;
    }
    schema::SENSITIVITY.check_file(&dir.join("summary.csv"))?;
    Ok(rows)
}

pub fn write_sensitivity_csv<W: Write>(mut w: W, rows: &[SensitivityRow]) -> std::io::Result<()> {
    writeln!(w, "{}", schema::SENSITIVITY.header())?;
    let opt = |v: Option<usize>| v.map(|e| e.to_string()).unwrap_or_default();
    for r in rows {
        let last = r.last();
        writeln!(
            w,
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
            r.factor,
            r.value,
            last.epoch,
            last.train_mse,
            last.val_mse,
            r.best_val(),
            r.natural_val_mse,
            opt(r.epochs_to_beat_natural),
            opt(r.diverged_at)
        )?;
    }
    Ok(())
}

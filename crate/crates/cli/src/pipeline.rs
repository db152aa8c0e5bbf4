//! Stage implementations. Each stage loads its inputs from the artifact
//! store (checking their hashes against the current config), does its work
//! and writes exactly one artifact.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use patternforge::backtest::{
    assign_label, build_confusion, compute_metrics, grid_points, infer_direction, random_baseline, run_protocol,
    truth_direction, ConfusionMatrix, Direction, MetricsReport, Signal, TradeRecord,
};
use patternforge::chart::{extract_prototypes, PatternName, PatternPrototype};
use patternforge::classifier::{
    apply_confidence_threshold, featurize, featurize_all, ks_label_filter, KsReport, PatternClassifier, Prediction,
    NOISE,
};
use patternforge::dtw::DbaConfig;
use patternforge::encoder::{prefix_and_interpolate, train_encoder, TrainedEncoder};
use patternforge::rng::substream;
use patternforge::series::{
    ingest_csv, kernel_smooth, kernel_smooth_matrix, minmax_normalize_matrix, split_by_dates, MultivariateSeries,
    SmoothingConfig, SplitSeries,
};
use patternforge::shapelets::{build_latent_cloud, cluster_candidates, score_and_filter, Shapelet};
use patternforge::simpc::{run_simpc, scale_delta, SimpcConfig, SimpcOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_json, Stage, Store, SCHEMA_VERSION};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestPayload {
    pub source: String,
    /// Leading rows dropped because their RSI was still warming up.
    pub warmup_rows: usize,
    pub split: SplitSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothPayload {
    pub bandwidth: f64,
    pub train: MultivariateSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypesPayload {
    pub seed_files: Vec<String>,
    pub prototypes: Vec<PatternPrototype>,
}

/// Stand-alone per-pattern document written next to the stage artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeDocument {
    pub schema_version: u32,
    pub config_hash: String,
    pub prototype: PatternPrototype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpcPayload {
    /// The clustering config actually used, with the scaled threshold.
    pub effective: SimpcConfig,
    pub seeds_used: Vec<PatternName>,
    pub outcome: SimpcOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSubsequence {
    pub start: usize,
    pub length: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderPayload {
    /// Earlier members in time order; fit the encoder, shapelets and SVM.
    pub fit: Vec<LabeledSubsequence>,
    /// Later members; fit the label filter only. Empty when the filter is
    /// fitted in-sample.
    pub holdout: Vec<LabeledSubsequence>,
    pub trained: TrainedEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeletsPayload {
    pub n_cloud_points: usize,
    pub n_candidates: usize,
    pub shapelets: Vec<Shapelet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierPayload {
    pub n_train: usize,
    pub train_accuracy: f64,
    pub classifier: PatternClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsPayload {
    /// Subsequences the filter was fitted on.
    pub n_eval: usize,
    /// `None` when the filter is disabled.
    pub report: Option<KsReport>,
    pub classifier: PatternClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSummary {
    pub runs: usize,
    pub n_trades: usize,
    pub mean_ar: f64,
    pub std_ar: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_trwf: f64,
    pub std_trwf: f64,
    /// Mean over runs with a finite ratio.
    pub mean_wlr: f64,
    pub runs_wlr_infinite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelResult {
    pub top_x: f64,
    /// Grid indices whose prediction survived both filters.
    pub retained: Vec<usize>,
    pub removed_pct: f64,
    pub metrics: MetricsReport,
    pub random: RandomSummary,
    pub confusion: ConfusionMatrix,
    pub trades: Vec<TradeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterStats {
    pub n_grid: usize,
    pub n_patterns_before_ks: usize,
    pub n_patterns_after_ks: usize,
    pub removed_by_ks_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub index: usize,
    pub date: chrono::NaiveDate,
    pub truth_label: i64,
    pub before_ks: Prediction,
    pub after_ks: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestPayload {
    pub label_universe: Vec<i64>,
    pub discarded: Vec<usize>,
    /// Trade direction of each pattern label, from its centroid.
    pub directions: Vec<Direction>,
    pub grid: Vec<GridPoint>,
    pub filter_stats: FilterStats,
    pub confusion_before_ks: ConfusionMatrix,
    pub confusion_after_ks: ConfusionMatrix,
    pub levels: Vec<LevelResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSummary {
    pub p_prime: usize,
    pub effective_delta: f64,
    pub seeds_used: Vec<PatternName>,
    pub cluster_sizes: Vec<usize>,
    pub iterations: Vec<patternforge::simpc::IterationDiagnostics>,
    pub separation: patternforge::simpc::SeparationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSummary {
    pub top_x: f64,
    pub removed_pct: f64,
    pub metrics: MetricsReport,
    pub random: RandomSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPayload {
    pub patterns: PatternSummary,
    pub encoder_loss: Vec<f64>,
    pub n_shapelets: usize,
    pub ks: Option<KsReport>,
    pub filter_stats: FilterStats,
    pub levels: Vec<LevelSummary>,
    pub confusion_before_ks: ConfusionMatrix,
    pub confusion_after_ks: ConfusionMatrix,
    pub confusion_by_level: Vec<(f64, ConfusionMatrix)>,
    pub trades: Vec<(f64, Vec<TradeRecord>)>,
    pub config: PipelineConfig,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub store: Store,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out_dir: &Path) -> CliResult<Self> {
        cfg.validate()?;
        Ok(Self {
            store: Store::new(out_dir)?,
            cfg,
        })
    }

    pub fn run_all(&self) -> CliResult<()> {
        Stage::ALL.into_iter().try_for_each(|s| self.run_stage(s))
    }

    pub fn run_stage(&self, stage: Stage) -> CliResult<()> {
        log::info!("stage {stage}: start");
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Smooth => self.smooth(),
            Stage::Prototypes => self.prototypes(),
            Stage::Simpc => self.simpc(),
            Stage::TrainEncoder => self.train_encoder(),
            Stage::Shapelets => self.shapelets(),
            Stage::TrainClassifier => self.train_classifier(),
            Stage::KsFilter => self.ks_filter(),
            Stage::Backtest => self.backtest(),
            Stage::Report => self.report(),
        }?;
        log::info!("stage {stage}: done");
        Ok(())
    }

    fn read<T: serde::de::DeserializeOwned>(&self, stage: Stage) -> CliResult<T> {
        self.store.read(stage, &self.cfg)
    }

    fn smoothing(&self) -> CliResult<SmoothingConfig> {
        Ok(SmoothingConfig::new(self.cfg.smoothing.bandwidth)?)
    }

    fn ingest(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let path = cfg.resolve(&cfg.data.series);
        let ing = ingest_csv(&path, &cfg.channel_refs(), cfg.data.rsi_period)?;
        let series = ing.series.skip_rows(ing.warmup_rows);
        let split = split_by_dates(&series, cfg.split.ranges()?)?;
        log::info!(
            "ingested {} rows: train {}, valid {}, test {}",
            series.len(),
            split.train.len(),
            split.valid.len(),
            split.test.len()
        );
        if split.train.is_empty() || split.test.is_empty() {
            return Err(CliError::Config("split: train and test ranges must both contain data".into()));
        }
        self.store.write(
            Stage::Ingest,
            cfg,
            IngestPayload {
                source: cfg.data.series.clone(),
                warmup_rows: ing.warmup_rows,
                split,
            },
        )?;
        Ok(())
    }

    fn smooth(&self) -> CliResult<()> {
        let ing: IngestPayload = self.read(Stage::Ingest)?;
        let train = kernel_smooth(&ing.split.train, self.smoothing()?)?;
        self.store.write(
            Stage::Smooth,
            &self.cfg,
            SmoothPayload {
                bandwidth: self.cfg.smoothing.bandwidth,
                train,
            },
        )?;
        Ok(())
    }

    fn prototypes(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let mut files = Vec::new();
        let mut prototypes = Vec::new();
        if !cfg.data.seed_dir.is_empty() {
            let dir = cfg.resolve(&cfg.data.seed_dir);
            let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
            let mut paths: Vec<_> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            paths.sort();
            let mut universe = Vec::new();
            for p in &paths {
                let ing = ingest_csv(p, &cfg.channel_refs(), cfg.data.rsi_period)?;
                universe.push(ing.series.skip_rows(ing.warmup_rows));
                files.push(p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
            }
            if !universe.is_empty() {
                let dba = DbaConfig {
                    ref_len: cfg.simpc.ref_len,
                    max_iter: cfg.simpc.dba_max_iter,
                    tol: cfg.simpc.dba_tol,
                };
                prototypes = extract_prototypes(&universe, &cfg.data.price_channel, cfg.simpc.ref_len, &cfg.chart, dba)?;
            }
            log::info!("{} prototypes from {} seed files", prototypes.len(), files.len());
        }
        let proto_dir = self.store.dir.join("prototypes");
        if proto_dir.exists() {
            std::fs::remove_dir_all(&proto_dir).map_err(|e| CliError::io(&proto_dir, e))?;
        }
        if !prototypes.is_empty() {
            std::fs::create_dir_all(&proto_dir).map_err(|e| CliError::io(&proto_dir, e))?;
            for p in &prototypes {
                let doc = PrototypeDocument {
                    schema_version: SCHEMA_VERSION,
                    config_hash: Stage::Prototypes.config_hash(cfg),
                    prototype: p.clone(),
                };
                write_json(&proto_dir.join(format!("{}.json", p.pattern_name)), &doc)?;
            }
        }
        self.store.write(
            Stage::Prototypes,
            cfg,
            PrototypesPayload {
                seed_files: files,
                prototypes,
            },
        )?;
        Ok(())
    }

    fn effective_simpc(&self, dim: usize) -> CliResult<SimpcConfig> {
        let mut sc = self.cfg.simpc.clone();
        if self.cfg.run.scale_delta {
            sc.delta = scale_delta(sc.delta, dim)?;
        }
        Ok(sc)
    }

    fn simpc(&self) -> CliResult<()> {
        let smooth: SmoothPayload = self.read(Stage::Smooth)?;
        let protos: PrototypesPayload = self.read(Stage::Prototypes)?;
        let effective = self.effective_simpc(smooth.train.dim())?;
        // Most frequent patterns seed first; ties keep rule order.
        let mut ranked = protos.prototypes;
        ranked.sort_by(|a, b| b.instance_count.cmp(&a.instance_count).then(a.pattern_name.cmp(&b.pattern_name)));
        ranked.truncate(effective.m);
        let seeds: Vec<Array2<f64>> = ranked.iter().map(|p| p.values.clone()).collect();
        let mut rng = substream(self.cfg.run.seed, "simpc");
        let outcome = run_simpc(smooth.train.values(), seeds, &effective, &mut rng)?;
        log::info!(
            "{} patterns, sizes {:?}",
            outcome.clusters.p_prime(),
            outcome.clusters.members.iter().map(Vec::len).collect::<Vec<_>>()
        );
        if outcome.clusters.p_prime() < 2 {
            return Err(CliError::Core(patternforge::Error::Pipeline(format!(
                "clustering found {} pattern(s); at least two are needed to train a classifier",
                outcome.clusters.p_prime()
            ))));
        }
        self.store.write(
            Stage::Simpc,
            &self.cfg,
            SimpcPayload {
                effective,
                seeds_used: ranked.iter().map(|p| p.pattern_name).collect(),
                outcome,
            },
        )?;
        Ok(())
    }

    fn train_encoder(&self) -> CliResult<()> {
        let smooth: SmoothPayload = self.read(Stage::Smooth)?;
        let simpc: SimpcPayload = self.read(Stage::Simpc)?;
        let mut all: Vec<LabeledSubsequence> = simpc
            .outcome
            .clusters
            .members
            .iter()
            .enumerate()
            .flat_map(|(label, ms)| {
                ms.iter().map(move |m| LabeledSubsequence {
                    start: m.start,
                    length: m.length,
                    label,
                })
            })
            .collect();
        all.sort_by_key(|m| (m.start, m.length));
        let n_hold = (all.len() as f64 * self.cfg.classifier.ks_holdout).round() as usize;
        let holdout = all.split_off(all.len() - n_hold.min(all.len().saturating_sub(1)));
        let fit = all;
        let subs = cut(&smooth.train, &fit);
        let views: Vec<ArrayView2<'_, f64>> = subs.iter().map(|a| a.view()).collect();
        let mut rng = substream(self.cfg.run.seed, "encoder");
        let trained = train_encoder(&views, &self.cfg.encoder, &mut rng)?;
        log::info!(
            "encoder trained on {} samples; loss {:?} -> {:?}",
            trained.n_samples,
            trained.loss_trace.first(),
            trained.loss_trace.last()
        );
        self.store.write(Stage::TrainEncoder, &self.cfg, EncoderPayload { fit, holdout, trained })?;
        Ok(())
    }

    fn shapelets(&self) -> CliResult<()> {
        let smooth: SmoothPayload = self.read(Stage::Smooth)?;
        let simpc: SimpcPayload = self.read(Stage::Simpc)?;
        let enc: EncoderPayload = self.read(Stage::TrainEncoder)?;
        let subs = cut(&smooth.train, &enc.fit);
        let views: Vec<ArrayView2<'_, f64>> = subs.iter().map(|a| a.view()).collect();
        let labels: Vec<usize> = enc.fit.iter().map(|m| m.label).collect();
        let cloud = build_latent_cloud(&enc.trained.params, &views, &labels, &self.cfg.encoder)?;
        let mut rng = substream(self.cfg.run.seed, "shapelets");
        let candidates = cluster_candidates(&cloud, &self.cfg.shapelets, &mut rng)?;
        let n_candidates = candidates.len();
        let shapelets = score_and_filter(candidates, simpc.outcome.clusters.p_prime())?;
        log::info!("{} of {n_candidates} shapelet candidates kept", shapelets.len());
        self.store.write(
            Stage::Shapelets,
            &self.cfg,
            ShapeletsPayload {
                n_cloud_points: cloud.len(),
                n_candidates,
                shapelets,
            },
        )?;
        Ok(())
    }

    fn features(&self, train: &MultivariateSeries, members: &[LabeledSubsequence], shapelets: &[Shapelet]) -> CliResult<Vec<Vec<f64>>> {
        let enc = &self.cfg.encoder;
        let prefixes = cut(train, members)
            .iter()
            .map(|sub| prefix_and_interpolate(sub.view(), enc.gamma, enc.interp_len))
            .collect::<patternforge::Result<Vec<_>>>()?;
        let views: Vec<ArrayView2<'_, f64>> = prefixes.iter().map(|a| a.view()).collect();
        Ok(featurize_all(&views, shapelets)?)
    }

    fn train_classifier(&self) -> CliResult<()> {
        let smooth: SmoothPayload = self.read(Stage::Smooth)?;
        let enc: EncoderPayload = self.read(Stage::TrainEncoder)?;
        let shp: ShapeletsPayload = self.read(Stage::Shapelets)?;
        let phi = self.features(&smooth.train, &enc.fit, &shp.shapelets)?;
        let labels: Vec<usize> = enc.fit.iter().map(|m| m.label).collect();
        let classifier = PatternClassifier::train(&phi, &labels, &self.cfg.classifier)?;
        let correct = phi
            .iter()
            .zip(&labels)
            .map(|(f, &l)| classifier.predict_proba(f).map(|p| p.label == l as i64))
            .collect::<patternforge::Result<Vec<bool>>>()?;
        let train_accuracy = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        log::info!("classifier train accuracy {train_accuracy:.3}");
        self.store.write(
            Stage::TrainClassifier,
            &self.cfg,
            ClassifierPayload {
                n_train: phi.len(),
                train_accuracy,
                classifier,
            },
        )?;
        Ok(())
    }

    fn ks_filter(&self) -> CliResult<()> {
        let smooth: SmoothPayload = self.read(Stage::Smooth)?;
        let enc: EncoderPayload = self.read(Stage::TrainEncoder)?;
        let shp: ShapeletsPayload = self.read(Stage::Shapelets)?;
        let clf: ClassifierPayload = self.read(Stage::TrainClassifier)?;
        let cc = &self.cfg.classifier;
        // Without a holdout the filter is fitted in-sample on the fit set.
        let eval_set = if enc.holdout.is_empty() { &enc.fit } else { &enc.holdout };
        let (classifier, report) = if cc.ks_filter {
            let phi = self.features(&smooth.train, eval_set, &shp.shapelets)?;
            let eval = phi
                .iter()
                .zip(eval_set)
                .map(|(f, m)| clf.classifier.predict_proba(f).map(|p| (p, m.label)))
                .collect::<patternforge::Result<Vec<_>>>()?;
            let (c, r) = ks_label_filter(clf.classifier, &eval, cc.ks_alpha, cc.ks_mode)?;
            log::info!("label filter discarded {:?}", c.discarded);
            (c, Some(r))
        } else {
            log::info!("label filter disabled");
            (clf.classifier, None)
        };
        self.store.write(
            Stage::KsFilter,
            &self.cfg,
            KsPayload {
                n_eval: eval_set.len(),
                report,
                classifier,
            },
        )?;
        Ok(())
    }

    fn backtest(&self) -> CliResult<()> {
        let cfg = &self.cfg;
        let bt = &cfg.backtest;
        let ing: IngestPayload = self.read(Stage::Ingest)?;
        let simpc: SimpcPayload = self.read(Stage::Simpc)?;
        let shp: ShapeletsPayload = self.read(Stage::Shapelets)?;
        let before: ClassifierPayload = self.read(Stage::TrainClassifier)?;
        let after: KsPayload = self.read(Stage::KsFilter)?;
        let test = &ing.split.test;
        let close_col = test
            .channel_index(&cfg.data.price_channel)
            .ok_or_else(|| CliError::Config("data.price_channel missing from the test series".into()))?;
        let close: Vec<f64> = test.values().column(close_col).to_vec();
        let dates = test.dates();
        let centroids = &simpc.outcome.clusters.centroids;
        let directions = centroids
            .iter()
            .map(|c| infer_direction(c.view(), close_col, cfg.encoder.gamma))
            .collect::<patternforge::Result<Vec<_>>>()?;
        let infer_len = if bt.infer_len == 0 { cfg.encoder.interp_len } else { bt.infer_len };
        let smoothing = self.smoothing()?;
        let prepare = |w: ArrayView2<'_, f64>| -> patternforge::Result<Array2<f64>> {
            if bt.smooth_window {
                kernel_smooth_matrix(w, smoothing)
            } else {
                Ok(w.to_owned())
            }
        };
        let values = test.values();
        let grid_idx = grid_points(test.len(), bt.window, bt.interval);
        let grid = grid_idx
            .par_iter()
            .map(|&t| -> patternforge::Result<GridPoint> {
                let window = prepare(values.slice(s![t + 1 - bt.window..=t, ..]))?;
                let prefix = prefix_and_interpolate(window.view(), 1.0, infer_len)?;
                let phi = featurize(prefix.view(), &shp.shapelets)?;
                let full = prepare(values.slice(s![t + 1 - bt.window..=t + bt.interval, ..]))?;
                let truth_label = assign_label(minmax_normalize_matrix(full.view()).view(), centroids, &simpc.effective)?;
                Ok(GridPoint {
                    index: t,
                    date: dates[t],
                    truth_label,
                    before_ks: before.classifier.predict_proba(&phi)?,
                    after_ks: after.classifier.predict_proba(&phi)?,
                })
            })
            .collect::<patternforge::Result<Vec<_>>>()?;

        let mut universe: Vec<i64> = vec![NOISE];
        universe.extend((0..centroids.len() as i64).collect::<Vec<_>>());
        let truth: Vec<i64> = grid.iter().map(|g| g.truth_label).collect();
        let labels_of = |ps: &[Prediction]| ps.iter().map(|p| p.label).collect::<Vec<i64>>();
        let before_preds: Vec<Prediction> = grid.iter().map(|g| g.before_ks.clone()).collect();
        let after_preds: Vec<Prediction> = grid.iter().map(|g| g.after_ks.clone()).collect();
        let n_before = before_preds.iter().filter(|p| p.label != NOISE).count();
        let n_after = after_preds.iter().filter(|p| p.label != NOISE).count();
        let filter_stats = FilterStats {
            n_grid: grid.len(),
            n_patterns_before_ks: n_before,
            n_patterns_after_ks: n_after,
            removed_by_ks_pct: pct(n_before - n_after, n_before),
        };

        let mut levels = Vec::new();
        for &x in &bt.top_x {
            let kept = apply_confidence_threshold(&after_preds, x)?;
            let signals: Vec<Signal> = grid
                .iter()
                .zip(&kept)
                .map(|(g, p)| Signal {
                    t: g.index,
                    label: p.label,
                    p_max: p.p_max,
                })
                .collect();
            let trades = run_protocol(&close, dates, &signals, |l| directions[l], bt)?;
            let truth_dirs: Vec<Direction> = trades
                .iter()
                .map(|tr| truth_direction(&close, tr.open_index, bt.interval))
                .collect();
            let metrics = compute_metrics(&trades, &truth_dirs)?;
            let random = self.random_summary(&close, dates, &grid_idx, trades.len(), x)?;
            let retained: Vec<usize> = (0..kept.len()).filter(|&i| kept[i].label != NOISE).collect();
            log::info!(
                "T@{x}: {} trades, AR {:.5}, TRwf {:.4}, random AR {:.5}",
                trades.len(),
                metrics.ar,
                metrics.trwf,
                random.mean_ar
            );
            levels.push(LevelResult {
                top_x: x,
                removed_pct: pct(n_after - retained.len(), n_after),
                retained,
                metrics,
                random,
                confusion: build_confusion(&truth, &labels_of(&kept), &universe)?,
                trades,
            });
        }
        self.store.write(
            Stage::Backtest,
            cfg,
            BacktestPayload {
                discarded: after.classifier.discarded.clone(),
                confusion_before_ks: build_confusion(&truth, &labels_of(&before_preds), &universe)?,
                confusion_after_ks: build_confusion(&truth, &labels_of(&after_preds), &universe)?,
                label_universe: universe,
                directions,
                grid,
                filter_stats,
                levels,
            },
        )?;
        Ok(())
    }

    fn random_summary(
        &self,
        close: &[f64],
        dates: &[chrono::NaiveDate],
        grid: &[usize],
        k: usize,
        x: f64,
    ) -> CliResult<RandomSummary> {
        let bt = &self.cfg.backtest;
        let runs = if k == 0 { 0 } else { bt.random_runs };
        let mut reports = Vec::with_capacity(runs);
        for r in 0..runs {
            let mut rng = substream(self.cfg.run.seed, &format!("backtest.random.{x}.{r}"));
            let trades = random_baseline(close, dates, grid, k, bt, &mut rng)?;
            let truth: Vec<Direction> = trades
                .iter()
                .map(|t| truth_direction(close, t.open_index, bt.interval))
                .collect();
            reports.push(compute_metrics(&trades, &truth)?);
        }
        let (mean_ar, std_ar) = mean_std(reports.iter().map(|m| m.ar));
        let (mean_f1, std_f1) = mean_std(reports.iter().map(|m| m.f1));
        let (mean_trwf, std_trwf) = mean_std(reports.iter().map(|m| m.trwf));
        let (mean_wlr, _) = mean_std(reports.iter().filter(|m| !m.wlr_infinite).map(|m| m.wlr));
        Ok(RandomSummary {
            runs,
            n_trades: k,
            mean_ar,
            std_ar,
            mean_f1,
            std_f1,
            mean_trwf,
            std_trwf,
            mean_wlr,
            runs_wlr_infinite: reports.iter().filter(|m| m.wlr_infinite).count(),
        })
    }

    fn report(&self) -> CliResult<()> {
        let simpc: SimpcPayload = self.read(Stage::Simpc)?;
        let enc: EncoderPayload = self.read(Stage::TrainEncoder)?;
        let shp: ShapeletsPayload = self.read(Stage::Shapelets)?;
        let ks: KsPayload = self.read(Stage::KsFilter)?;
        let bt: BacktestPayload = self.read(Stage::Backtest)?;
        let clusters = &simpc.outcome.clusters;
        let report = ReportPayload {
            patterns: PatternSummary {
                p_prime: clusters.p_prime(),
                effective_delta: simpc.effective.delta,
                seeds_used: simpc.seeds_used.clone(),
                cluster_sizes: clusters.members.iter().map(Vec::len).collect(),
                iterations: simpc.outcome.iterations.clone(),
                separation: simpc.outcome.pre_merge.clone(),
            },
            encoder_loss: enc.trained.loss_trace.clone(),
            n_shapelets: shp.shapelets.len(),
            ks: ks.report.clone(),
            filter_stats: bt.filter_stats.clone(),
            levels: bt
                .levels
                .iter()
                .map(|l| LevelSummary {
                    top_x: l.top_x,
                    removed_pct: l.removed_pct,
                    metrics: l.metrics.clone(),
                    random: l.random.clone(),
                })
                .collect(),
            confusion_before_ks: bt.confusion_before_ks.clone(),
            confusion_after_ks: bt.confusion_after_ks.clone(),
            confusion_by_level: bt.levels.iter().map(|l| (l.top_x, l.confusion.clone())).collect(),
            trades: bt.levels.iter().map(|l| (l.top_x, l.trades.clone())).collect(),
            config: self.cfg.canonical(),
        };
        self.write_csvs(&bt)?;
        self.store.write(Stage::Report, &self.cfg, report)?;
        Ok(())
    }

    fn write_csvs(&self, bt: &BacktestPayload) -> CliResult<()> {
        let mut trades = String::from(
            "top_x,open_date,exit_date,direction,entry_price,exit_price,gross_return,net_return,pattern_label,p_max\n",
        );
        let mut equity = String::from("top_x,exit_date,trade,net_return,cumulative_net\n");
        for l in &bt.levels {
            let mut cum = 0.0;
            for (i, t) in l.trades.iter().enumerate() {
                let dir = match t.direction {
                    Direction::Long => "long",
                    Direction::Short => "short",
                };
                trades.push_str(&format!(
                    "{},{},{},{dir},{},{},{},{},{},{}\n",
                    l.top_x,
                    t.open_date,
                    t.exit_date,
                    t.entry_price,
                    t.exit_price,
                    t.gross_return,
                    t.net_return,
                    t.pattern_label,
                    t.p_max
                ));
                cum += t.net_return;
                equity.push_str(&format!("{},{},{},{},{cum}\n", l.top_x, t.exit_date, i + 1, t.net_return));
            }
        }
        for (name, text) in [("trades.csv", trades), ("equity.csv", equity)] {
            let path = self.store.dir.join(name);
            std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Raw `length x D` slices of `series` for each member.
fn cut(series: &MultivariateSeries, members: &[LabeledSubsequence]) -> Vec<Array2<f64>> {
    let v = series.values();
    members
        .iter()
        .map(|m| v.slice(s![m.start..m.start + m.length, ..]).to_owned())
        .collect()
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.collect();
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

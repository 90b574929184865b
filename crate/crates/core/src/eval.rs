//! Error metrics, reference baselines and season-wise reports.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::data::{split_by_date, DailySample, Hemisphere, NormStats, Season};
use crate::error::{Error, Result};
use crate::model::Disaggregator;

/// Candidate neighbour counts tried when k is selected on validation data.
pub const KNN_CANDIDATES: [usize; 4] = [1, 3, 5, 10];
pub const KNN_DEFAULT_K: usize = 5;

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("prediction has {} values, truth {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean absolute error of one series.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("mae", pred, truth)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
}

/// Root mean squared error of one series.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("rmse", pred, truth)?;
    let n = pred.len().max(1) as f64;
    Ok((pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt())
}

fn truth_of(s: &DailySample) -> Result<&[f64]> {
    s.pv_truth.as_deref().ok_or_else(|| {
        Error::Validation(format!(
            "{} {} has no PV truth; evaluation needs metered generation (use predict for net-load-only data)",
            s.prosumer_id, s.date
        ))
    })
}

/// Slot-wise mean of the training PV series, the same for every query.
pub fn mean_baseline(train: &[DailySample]) -> Result<Vec<f64>> {
    let first = train.first().ok_or_else(|| Error::EmptyDataset("mean baseline needs training days".into()))?;
    let mut acc = vec![0.0; first.net_load.len()];
    for s in train {
        let t = truth_of(s)?;
        check_len("mean_baseline", &acc, t)?;
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    let n = train.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Nearest-neighbour regressor over normalized input features.
#[derive(Clone, Debug)]
pub struct KnnBaseline {
    norm: NormStats,
    features: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
}

impl KnnBaseline {
    pub fn fit(train: &[DailySample], norm: &NormStats) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("KNN baseline needs training days".into()));
        }
        let truth = train.iter().map(|s| truth_of(s).map(<[f64]>::to_vec)).collect::<Result<_>>()?;
        Ok(Self {
            norm: *norm,
            features: train.iter().map(|s| norm.features(s)).collect(),
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Mean PV of the `k` nearest training days. Ties in distance go to the
    /// earlier training day.
    pub fn predict(&self, query: &DailySample, k: usize) -> Result<Vec<f64>> {
        if k < 1 || k > self.len() {
            return Err(Error::Param(format!("k must be in 1..={}, got {k}", self.len())));
        }
        let q = self.norm.features(query);
        let mut dist: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = vec![0.0; self.truth[0].len()];
        for &(_, i) in &dist[..k] {
            for (o, v) in out.iter_mut().zip(&self.truth[i]) {
                *o += v;
            }
        }
        Ok(out.into_iter().map(|v| v / k as f64).collect())
    }
}

/// KNN prediction for one query from an explicit training set.
pub fn knn_baseline(train: &[DailySample], norm: &NormStats, query: &DailySample, k: usize) -> Result<Vec<f64>> {
    KnnBaseline::fit(train, norm)?.predict(query, k)
}

/// Picks k from [`KNN_CANDIDATES`] by mean validation MAE, neighbours drawn
/// from `fit`. The earliest candidate wins ties; with no validation days the
/// default k is returned (capped at the training size).
pub fn select_knn_k(fit: &[DailySample], val: &[DailySample], norm: &NormStats) -> Result<usize> {
    let knn = KnnBaseline::fit(fit, norm)?;
    if val.is_empty() {
        return Ok(KNN_DEFAULT_K.min(knn.len()));
    }
    let mut best: Option<(f64, usize)> = None;
    for k in KNN_CANDIDATES.into_iter().filter(|&k| k <= knn.len()) {
        let errs = val
            .par_iter()
            .map(|s| mae(&knn.predict(s, k)?, truth_of(s)?))
            .collect::<Result<Vec<f64>>>()?;
        let score = errs.iter().sum::<f64>() / errs.len() as f64;
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, k));
        }
    }
    Ok(best.map_or(1, |(_, k)| k))
}

/// How the KNN baseline chooses its neighbour count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KnnK {
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for KnnK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnnK::Auto => f.write_str("auto"),
            KnnK::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for KnnK {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(KnnK::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KnnK::Fixed(k)),
            _ => Err(Error::Config(format!("knn k must be 'auto' or a positive integer, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Proposed,
    Knn,
    MeanBaseline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Knn, Method::MeanBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "Proposed",
            Method::Knn => "KNN",
            Method::MeanBaseline => "MeanBaseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-day predictions of every method on one test set, aligned with it.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodPredictions {
    pub knn_k: usize,
    pub series: Vec<(Method, Vec<Vec<f64>>)>,
}

impl MethodPredictions {
    pub fn get(&self, method: Method) -> Option<&[Vec<f64>]> {
        self.series.iter().find(|(m, _)| *m == method).map(|(_, v)| v.as_slice())
    }
}

/// Runs the model and both baselines over `test`.
///
/// The baselines draw on `train`; with [`KnnK::Auto`] the neighbour count is
/// chosen on the last `val_fraction` of training dates.
pub fn predict_all(
    model: &Disaggregator,
    train: &[DailySample],
    test: &[DailySample],
    knn_k: KnnK,
    val_fraction: f64,
) -> Result<MethodPredictions> {
    let k = match knn_k {
        KnnK::Fixed(k) => k,
        KnnK::Auto => {
            let (fit, val) = split_by_date(train, val_fraction);
            if fit.is_empty() {
                KNN_DEFAULT_K.min(train.len())
            } else {
                select_knn_k(&fit, &val, &model.norm)?
            }
        }
    };
    let knn = KnnBaseline::fit(train, &model.norm)?;
    let mean = mean_baseline(train)?;
    let proposed = test
        .par_iter()
        .map(|s| model.predict_day(s).map(|p| p.ghat))
        .collect::<Result<Vec<_>>>()?;
    let neighbours = test.par_iter().map(|s| knn.predict(s, k)).collect::<Result<Vec<_>>>()?;
    Ok(MethodPredictions {
        knn_k: k,
        series: vec![
            (Method::Proposed, proposed),
            (Method::Knn, neighbours),
            (Method::MeanBaseline, vec![mean; test.len()]),
        ],
    })
}

/// Metrics of one (season, method) cell for a single run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonMetrics {
    pub season: Season,
    pub method: Method,
    pub mae: f64,
    pub rmse: f64,
    pub n_days: usize,
}

/// Mean of per-day MAE and RMSE per (season, method), summed in test-set order.
/// Seasons without test days are skipped with a warning.
pub fn season_metrics(
    test: &[DailySample],
    preds: &MethodPredictions,
    hemisphere: Hemisphere,
) -> Result<Vec<SeasonMetrics>> {
    let truths = test.iter().map(truth_of).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for season in Season::ALL {
        let days: Vec<usize> = (0..test.len()).filter(|&i| hemisphere.season_of(test[i].date) == season).collect();
        if days.is_empty() {
            log::warn!("no test days in {season}; omitting its rows");
            continue;
        }
        for (method, series) in &preds.series {
            if series.len() != test.len() {
                return Err(Error::shape("season_metrics", format!("{method}: {} predictions for {} days", series.len(), test.len())));
            }
            let (mut m, mut r) = (0.0, 0.0);
            for &i in &days {
                m += mae(&series[i], truths[i])?;
                r += rmse(&series[i], truths[i])?;
            }
            let n = days.len() as f64;
            rows.push(SeasonMetrics { season, method: *method, mae: m / n, rmse: r / n, n_days: days.len() });
        }
    }
    Ok(rows)
}

/// One row of the report: metrics averaged over repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub season: Season,
    pub method: Method,
    pub mae: f64,
    pub rmse: f64,
    pub mae_std: f64,
    pub rmse_std: f64,
    pub n_days: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeasonReport {
    pub rows: Vec<ReportRow>,
    pub seed: u64,
    pub repeats: usize,
    pub dataset_id: String,
}

pub const REPORT_COLUMNS: [&str; 7] = ["season", "method", "mae_kwh", "rmse_kwh", "mae_std", "rmse_std", "n_days"];

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SeasonReport {
    /// Aggregates runs: mean and population standard deviation over repeats.
    pub fn from_runs(runs: &[Vec<SeasonMetrics>], seed: u64, dataset_id: &str) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::EmptyDataset("no runs to report".into()))?;
        let mut rows = Vec::with_capacity(first.len());
        for (j, cell) in first.iter().enumerate() {
            let mut maes = Vec::with_capacity(runs.len());
            let mut rmses = Vec::with_capacity(runs.len());
            for run in runs {
                let other = run
                    .get(j)
                    .filter(|o| o.season == cell.season && o.method == cell.method)
                    .ok_or_else(|| Error::Contract("runs report different (season, method) cells".into()))?;
                maes.push(other.mae);
                rmses.push(other.rmse);
            }
            let (mae, mae_std) = mean_std(&maes);
            let (rmse, rmse_std) = mean_std(&rmses);
            rows.push(ReportRow { season: cell.season, method: cell.method, mae, rmse, mae_std, rmse_std, n_days: cell.n_days });
        }
        Ok(Self { rows, seed, repeats: runs.len(), dataset_id: dataset_id.to_string() })
    }

    pub fn row(&self, season: Season, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.season == season && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.season, r.method, r.mae, r.rmse, r.mae_std, r.rmse_std, r.n_days
            );
        }
        out
    }

    /// Plain-text table with run metadata in a header line.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "dataset {}  seed {}  repeats {}  (metrics: mean of per-day values over prosumer-days, kWh per slot)\n",
            self.dataset_id, self.seed, self.repeats
        );
        let _ = writeln!(
            out,
            "{:<8} {:<13} {:>10} {:>10} {:>10} {:>10} {:>7}",
            "season", "method", "MAE", "RMSE", "MAE sd", "RMSE sd", "days"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<13} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>7}",
                r.season.name(),
                r.method.name(),
                r.mae,
                r.rmse,
                r.mae_std,
                r.rmse_std,
                r.n_days
            );
        }
        out
    }
}

/// Slot-by-slot CSV of truth and every method over two consecutive days of
/// one prosumer.
pub fn emit_day_series(days: [&DailySample; 2], preds: [&[(Method, Vec<f64>)]; 2]) -> Result<String> {
    let [a, b] = days;
    if a.prosumer_id != b.prosumer_id {
        return Err(Error::Validation(format!("days belong to {} and {}", a.prosumer_id, b.prosumer_id)));
    }
    if a.date.succ_opt() != Some(b.date) {
        return Err(Error::Validation(format!("{} and {} are not consecutive dates", a.date, b.date)));
    }
    let methods: Vec<Method> = preds[0].iter().map(|(m, _)| *m).collect();
    if preds[1].iter().map(|(m, _)| *m).ne(methods.iter().copied()) {
        return Err(Error::Contract("both days must carry the same methods".into()));
    }
    let mut out = String::from("prosumer_id,date,slot,truth");
    for m in &methods {
        out.push(',');
        out.push_str(m.name());
    }
    out.push('\n');
    for (day, p) in days.into_iter().zip(preds) {
        let truth = truth_of(day)?;
        for (_, series) in p {
            check_len("emit_day_series", series, truth)?;
        }
        for (t, v) in truth.iter().enumerate() {
            let _ = write!(out, "{},{},{},{}", day.prosumer_id, day.date, t, v);
            for (_, series) in p {
                let _ = write!(out, ",{}", series[t]);
            }
            out.push('\n');
        }
    }
    Ok(out)
}

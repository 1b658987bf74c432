//! End-to-end subcommands: ingest, analyze, price and audit.
//!
//! Each step reads its inputs from the data directory or from files written
//! by earlier steps into the output directory, so the steps can be rerun
//! independently. Reruns on the same inputs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arima::{self, default_candidates};
use crate::audit::{self, AuditReport};
use crate::error::{Error, Result};
use crate::ingestion::{
    self, customer_months, load_actual_invoices, parse_tables, price_per_request_series,
    write_aggregates, write_price_series, MonthlyAggregate, TablePaths, Tables,
};
use crate::money::Cents;
use crate::month::MonthKey;
use crate::pricing::{
    build_tiers, change_distribution, compare_invoices, project_invoices, write_comparisons,
    write_histogram, ChangeMode, InvoiceComparison, TierTable, DEFAULT_BREAKPOINTS,
};
use crate::spline::{self, lambda_from_prior, select_knots, PriorSpec};
use crate::stationarity::{adf_test_default, pp_test, Regression, UnitRootResult};
use crate::timeseries::{acf, default_max_lag, difference, MonthlySeries};

pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const PRICE_SERIES_FILE: &str = "price_series.csv";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const TIERS_FILE: &str = "tiers.csv";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const HISTOGRAM_PERCENT_FILE: &str = "histogram_percent.csv";
pub const AUDIT_DIR: &str = "audit";

/// Significance level for the unit-root decisions.
pub const SIGNIFICANCE: f64 = 0.05;
/// Bucket width of both change histograms (dollars or percentage points).
pub const HISTOGRAM_BUCKET_WIDTH: f64 = 10.0;
/// Months of usage pooled for the tier percentiles.
pub const CALIBRATION_MONTHS: usize = 12;
/// Octiles: nine knots.
pub const KNOT_QUANTILES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub window: (MonthKey, MonthKey),
    pub prior: PriorSpec,
    pub breakpoints: Vec<f64>,
    pub multiplier: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            window: (
                MonthKey::new(2015, 11).expect("valid month"),
                MonthKey::new(2016, 12).expect("valid month"),
            ),
            prior: PriorSpec::REFERENCE,
            breakpoints: DEFAULT_BREAKPOINTS.to_vec(),
            multiplier: audit::DEFAULT_MULTIPLIER,
        }
    }
}

/// `start..end`, both `YYYY-MM`.
pub fn parse_window(s: &str) -> Result<(MonthKey, MonthKey)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| Error::InvalidArgument(format!("window `{s}` is not START..END")))?;
    let window = (a.trim().parse()?, b.trim().parse()?);
    if window.1 <= window.0 {
        return Err(Error::InvalidArgument(format!(
            "window start {} must precede end {}",
            window.0, window.1
        )));
    }
    Ok(window)
}

/// Comma-separated percents.
pub fn parse_breakpoints(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad breakpoint `{t}`")))
        })
        .collect()
}

fn parse_number(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("`{key}` expects a number, got `{v}`")))
}

/// Optional values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub window: Option<(MonthKey, MonthKey)>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub multiplier: Option<f64>,
    pub breakpoints: Option<Vec<f64>>,
}

impl PipelineConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    /// Keys: `data_dir`, `out_dir`, `window`, `alpha`, `beta`, `multiplier`,
    /// `breakpoints`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", i + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "data_dir" => cfg.data_dir = v.into(),
                "out_dir" => cfg.out_dir = v.into(),
                "window" => cfg.window = parse_window(v)?,
                "alpha" => cfg.prior.alpha = parse_number(k, v)?,
                "beta" => cfg.prior.beta = parse_number(k, v)?,
                "multiplier" => cfg.multiplier = parse_number(k, v)?,
                "breakpoints" => cfg.breakpoints = parse_breakpoints(v)?,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "config line {}: unknown key `{other}`",
                        i + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    pub fn apply(mut self, o: Overrides) -> Self {
        if let Some(v) = o.data_dir {
            self.data_dir = v;
        }
        if let Some(v) = o.out_dir {
            self.out_dir = v;
        }
        if let Some(v) = o.window {
            self.window = v;
        }
        if let Some(v) = o.alpha {
            self.prior.alpha = v;
        }
        if let Some(v) = o.beta {
            self.prior.beta = v;
        }
        if let Some(v) = o.multiplier {
            self.multiplier = v;
        }
        if let Some(v) = o.breakpoints {
            self.breakpoints = v;
        }
        self
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }

    fn load_tables(&self) -> Result<Tables> {
        parse_tables(&TablePaths::in_dir(&self.data_dir))
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Rounds a price to the six decimals used in analysis outputs.
pub fn round_price(p: f64) -> f64 {
    format!("{p:.6}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub aggregates: Vec<MonthlyAggregate>,
    pub series: MonthlySeries,
}

/// Writes `aggregates.csv` and `price_series.csv`.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestOutput> {
    let tables = cfg.load_tables()?;
    let aggregates = ingestion::monthly_aggregates(&tables.licenses, &tables.usage, cfg.window)?;
    let series = price_per_request_series(&aggregates)?;
    cfg.ensure_out_dir()?;
    write_aggregates(create(&cfg.out(AGGREGATES_FILE))?, &aggregates)?;
    write_price_series(create(&cfg.out(PRICE_SERIES_FILE))?, &series)?;
    Ok(IngestOutput { aggregates, series })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRootEntry {
    pub name: String,
    pub result: Option<UnitRootResult>,
    pub decision: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mse: f64,
    /// Median fitted price, six decimals.
    pub median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChosenModel {
    Arima,
    Spline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub window: (MonthKey, MonthKey),
    pub observations: usize,
    pub significance: f64,
    pub unit_root: Vec<UnitRootEntry>,
    pub arima: ModelSummary,
    pub arima_aic: f64,
    pub spline: ModelSummary,
    pub spline_lambda: f64,
    pub spline_knots: Vec<f64>,
    pub chosen: ChosenModel,
    /// Median of the lower-MSE model, six decimals.
    pub stable_price: f64,
}

fn unit_root_entry(name: &str, r: Result<UnitRootResult>) -> UnitRootEntry {
    match r {
        Ok(res) => UnitRootEntry {
            name: name.into(),
            decision: Some(res.decision(SIGNIFICANCE)),
            result: Some(res),
            error: None,
        },
        Err(e) => UnitRootEntry {
            name: name.into(),
            result: None,
            decision: None,
            error: Some(e.to_string()),
        },
    }
}

/// Analyzes `price_series.csv` and writes the ACF tables, the ARIMA
/// ranking, the spline fit and `analysis.json`.
pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<AnalysisReport> {
    let path = cfg.out(PRICE_SERIES_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let series = ingestion::read_price_series(file, PRICE_SERIES_FILE)?;
    analyze_series(cfg, &series)
}

pub fn analyze_series(cfg: &PipelineConfig, series: &MonthlySeries) -> Result<AnalysisReport> {
    let v = series.values();
    if v.iter().all(|x| *x == v[0]) {
        return Err(Error::DegenerateSeries("price series is constant".into()));
    }
    cfg.ensure_out_dir()?;
    let diff = difference(series, 1)?;

    acf(series, default_max_lag(series.len()))?.write_csv(create(&cfg.out("acf_levels.csv"))?)?;
    match acf(&diff, default_max_lag(diff.len())) {
        Ok(a) => a.write_csv(create(&cfg.out("acf_diff.csv"))?)?,
        Err(Error::DegenerateSeries(_)) => {}
        Err(e) => return Err(e),
    }

    let unit_root = vec![
        unit_root_entry("adf_first_difference", adf_test_default(&diff, Regression::Trend)),
        unit_root_entry("pp_first_difference", pp_test(&diff, Regression::None)),
    ];

    let (best, ranking) = arima::select_model(series, &default_candidates())?;
    ranking.write_csv(create(&cfg.out("arima_ranking.csv"))?)?;
    let arima = ModelSummary {
        model: best.spec.to_string(),
        mse: arima::mse(&best, series),
        median: round_price(arima::fitted_median(&best)),
    };

    let xs: Vec<f64> = (1..=series.len()).map(|i| i as f64).collect();
    let lambda = lambda_from_prior(cfg.prior)?;
    let knots = select_knots(&xs, KNOT_QUANTILES)?;
    let sfit = spline::fit(&xs, v, lambda, &knots)?;
    sfit.write_csv(create(&cfg.out("spline_fit.csv"))?)?;
    let meta = sfit.metadata(v);
    let mut meta_json = serde_json::to_string_pretty(&meta)?;
    meta_json.push('\n');
    write_string(&cfg.out("spline.json"), &meta_json)?;
    let spline = ModelSummary {
        model: "cubic smoothing spline".into(),
        mse: meta.mse,
        median: round_price(meta.median),
    };

    let chosen = if spline.mse <= arima.mse {
        ChosenModel::Spline
    } else {
        ChosenModel::Arima
    };
    let stable_price = match chosen {
        ChosenModel::Spline => spline.median,
        ChosenModel::Arima => arima.median,
    };
    let report = AnalysisReport {
        window: (series.start(), series.end()),
        observations: series.len(),
        significance: SIGNIFICANCE,
        unit_root,
        arima,
        arima_aic: best.aic,
        spline,
        spline_lambda: lambda,
        spline_knots: knots,
        chosen,
        stable_price,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_string(&cfg.out(ANALYSIS_FILE), &json)?;
    Ok(report)
}

/// Stable price recorded by a previous `analyze` run.
pub fn load_stable_price(cfg: &PipelineConfig) -> Result<f64> {
    let path = cfg.out(ANALYSIS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: AnalysisReport = serde_json::from_str(&text)?;
    Ok(report.stable_price)
}

/// The last [`CALIBRATION_MONTHS`] months of the window.
pub fn calibration_months(cfg: &PipelineConfig) -> (MonthKey, MonthKey) {
    let (start, end) = cfg.window;
    let from = end.add_months(1 - CALIBRATION_MONTHS as i64).max(start);
    (from, end)
}

/// Tier table from pooled customer-month request counts of the calibration
/// months.
pub fn calibrate_tiers(cfg: &PipelineConfig, tables: &Tables, unit_price: f64) -> Result<TierTable> {
    let (from, to) = calibration_months(cfg);
    let pooled: Vec<u64> = ingestion::merge_usage(tables.usage.clone())
        .into_iter()
        .filter(|u| u.month >= from && u.month <= to)
        .map(|u| u.request_count)
        .collect();
    build_tiers(&pooled, unit_price, &cfg.breakpoints)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceOutput {
    pub table: TierTable,
    pub projection_months: Vec<MonthKey>,
    pub comparisons: Vec<InvoiceComparison>,
    pub warnings: Vec<String>,
}

/// Builds the tier table and writes `tiers.csv`, `projection.csv` (first
/// month after the window, or the window's last month when the data end
/// there), `comparison.csv` and the two change histograms.
pub fn cmd_price(cfg: &PipelineConfig, stable_price: Option<f64>) -> Result<PriceOutput> {
    let unit_price = match stable_price {
        Some(p) => p,
        None => load_stable_price(cfg)?,
    };
    let tables = cfg.load_tables()?;
    let table = calibrate_tiers(cfg, &tables, unit_price)?;
    cfg.ensure_out_dir()?;
    table.write_csv(create(&cfg.out(TIERS_FILE))?)?;

    let mut projection_months: Vec<MonthKey> = tables
        .usage
        .iter()
        .map(|u| u.month)
        .filter(|m| *m > cfg.window.1)
        .collect();
    projection_months.sort();
    projection_months.dedup();
    if projection_months.is_empty() {
        projection_months.push(cfg.window.1);
    }
    let projections: Vec<_> = projection_months
        .iter()
        .map(|m| project_invoices(&tables.usage, &table, *m))
        .collect();
    let first = &projections[0];
    first.write_csv(create(&cfg.out(PROJECTION_FILE))?)?;

    let mut warnings = Vec::new();
    let actuals_path = cfg.data_dir.join(ingestion::ACTUAL_INVOICES_FILE);
    let mut comparisons = Vec::new();
    if actuals_path.exists() {
        let actuals = load_actual_invoices(&actuals_path)?;
        for p in &projections {
            if let Some(a) = actuals.iter().find(|a| a.month == p.month) {
                comparisons.push(compare_invoices(a.total_invoiced, p.total.dollars(), p.month)?);
            }
        }
        write_comparisons(create(&cfg.out(COMPARISON_FILE))?, &comparisons)?;
    } else {
        warnings.push(format!(
            "{} not found; invoice comparison skipped",
            actuals_path.display()
        ));
    }

    let month = first.month;
    let data = customer_months(&tables.licenses, &tables.usage, month);
    let old: Vec<Cents> = data.iter().map(|c| Cents::from_dollars(c.license_charge)).collect();
    let new: Vec<Cents> = data
        .iter()
        .map(|c| {
            first
                .per_customer
                .binary_search_by(|p| p.customer_guid.as_str().cmp(&c.customer_guid))
                .map(|i| first.per_customer[i].charge)
                .unwrap_or(Cents::ZERO)
        })
        .collect();
    let dollars = change_distribution(&old, &new, ChangeMode::Dollars, HISTOGRAM_BUCKET_WIDTH)?;
    write_histogram(create(&cfg.out(HISTOGRAM_FILE))?, &dollars)?;
    let percent = change_distribution(&old, &new, ChangeMode::Percent, HISTOGRAM_BUCKET_WIDTH)?;
    write_histogram(create(&cfg.out(HISTOGRAM_PERCENT_FILE))?, &percent)?;

    Ok(PriceOutput {
        table,
        projection_months,
        comparisons,
        warnings,
    })
}

/// Writes `audit/YYYY-MM.json` and `audit/YYYY-MM.txt` for `month`
/// (default: the window's last month).
pub fn cmd_audit(cfg: &PipelineConfig, month: Option<MonthKey>) -> Result<AuditReport> {
    let month = month.unwrap_or(cfg.window.1);
    let tables = cfg.load_tables()?;
    let unit_price = load_stable_price(cfg)?;
    let table = calibrate_tiers(cfg, &tables, unit_price)?;
    let dir = cfg.out(AUDIT_DIR);
    let history = audit::load_history(&dir, month)?;
    let report = audit::monthly_audit_report(
        month,
        &tables.licenses,
        &tables.usage,
        &table,
        cfg.multiplier,
        &history,
    )?;
    audit::write_report(&dir, &report)?;
    Ok(report)
}

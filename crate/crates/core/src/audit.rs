//! Under-reporting detection and the monthly audit report.
//!
//! A customer is flagged when it has portal activity but no active license,
//! or when its monthly requests exceed a multiple of the typical usage for
//! customers holding the same number of licenses. Reports are stored as
//! `audit/YYYY-MM.json` (plus a text rendering); repeat offenders are found by
//! reading earlier reports back.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingestion::{customer_months, CustomerMonth, LicenseRecord, UsageRecord};
use crate::month::MonthKey;
use crate::pricing::{assign_tier, TierTable};
use crate::timeseries::median;

pub const DEFAULT_MULTIPLIER: f64 = 6.0;

/// Groups smaller than this fall back to the population-wide per-license
/// median.
pub const MIN_GROUP_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditReason {
    ZeroLicenseActivity,
    ExceedsMultiplier,
}

impl AuditReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditReason::ZeroLicenseActivity => "zero_license_activity",
            AuditReason::ExceedsMultiplier => "exceeds_multiplier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub customer_guid: String,
    pub month: MonthKey,
    pub licenses: u64,
    pub requests: u64,
    pub baseline: f64,
    /// `requests / baseline`; infinite when the baseline is zero.
    #[serde(serialize_with = "ser_ratio", deserialize_with = "de_ratio")]
    pub ratio: f64,
    pub reason: AuditReason,
}

fn ser_ratio<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_ratio<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Raw::Text(t) => Err(serde::de::Error::custom(format!("bad ratio `{t}`"))),
    }
}

/// Expected monthly requests for a customer holding `license_count`
/// licenses, given `(licenses, requests)` pairs for a population.
///
/// The median over customers with the same license count when at least
/// [`MIN_GROUP_SIZE`] exist; otherwise the median of requests per license
/// over licensed customers, times `license_count`. Zero licenses give zero.
pub fn typical_usage(population: &[(u64, u64)], license_count: u64) -> Result<f64> {
    if population.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if license_count == 0 {
        return Ok(0.0);
    }
    let group: Vec<f64> = population
        .iter()
        .filter(|(l, _)| *l == license_count)
        .map(|(_, r)| *r as f64)
        .collect();
    if group.len() >= MIN_GROUP_SIZE {
        return Ok(median(&group));
    }
    let per_license: Vec<f64> = population
        .iter()
        .filter(|(l, _)| *l >= 1)
        .map(|(l, r)| *r as f64 / *l as f64)
        .collect();
    if per_license.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(median(&per_license) * license_count as f64)
}

/// Flags customers of one month. `data` is the month's per-customer state,
/// which also serves as the population for typical usage. Findings are
/// sorted by descending ratio, then guid.
pub fn flag_under_reporters(data: &[CustomerMonth], month: MonthKey, multiplier: f64) -> Result<Vec<AuditFinding>> {
    if !(multiplier > 1.0) || !multiplier.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "multiplier must exceed 1, got {multiplier}"
        )));
    }
    let population: Vec<(u64, u64)> = data.iter().map(|c| (c.licenses, c.requests)).collect();
    let mut baselines: BTreeMap<u64, f64> = BTreeMap::new();
    let mut findings = Vec::new();
    for c in data.iter().filter(|c| c.requests > 0) {
        let (baseline, reason) = if c.licenses == 0 {
            (0.0, AuditReason::ZeroLicenseActivity)
        } else {
            let b = match baselines.get(&c.licenses) {
                Some(b) => *b,
                None => {
                    let b = typical_usage(&population, c.licenses)?;
                    baselines.insert(c.licenses, b);
                    b
                }
            };
            if c.requests as f64 <= multiplier * b {
                continue;
            }
            (b, AuditReason::ExceedsMultiplier)
        };
        let ratio = if baseline > 0.0 {
            c.requests as f64 / baseline
        } else {
            f64::INFINITY
        };
        findings.push(AuditFinding {
            customer_guid: c.customer_guid.clone(),
            month,
            licenses: c.licenses,
            requests: c.requests,
            baseline,
            ratio,
            reason,
        });
    }
    findings.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then_with(|| a.customer_guid.cmp(&b.customer_guid))
    });
    Ok(findings)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCount {
    pub tier: usize,
    pub customers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streak {
    pub customer_guid: String,
    /// Consecutive flagged months ending with the report month.
    pub months: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub month: MonthKey,
    pub multiplier: f64,
    pub findings: Vec<AuditFinding>,
    pub tier_census: Vec<TierCount>,
    /// Customers by license count.
    pub license_census: BTreeMap<u64, usize>,
    pub streaks: Vec<Streak>,
}

/// Guids flagged in earlier reports, by month.
pub type AuditHistory = BTreeMap<MonthKey, BTreeSet<String>>;

pub fn monthly_audit_report(
    month: MonthKey,
    licenses: &[LicenseRecord],
    usage: &[UsageRecord],
    table: &TierTable,
    multiplier: f64,
    history: &AuditHistory,
) -> Result<AuditReport> {
    if !usage.iter().any(|u| u.month == month) {
        return Err(Error::MonthNotCovered(month));
    }
    let data = customer_months(licenses, usage, month);
    let findings = flag_under_reporters(&data, month, multiplier)?;

    let mut tiers = vec![0usize; table.tiers.len()];
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for u in usage.iter().filter(|u| u.month == month) {
        seen.insert(&u.customer_guid);
    }
    for c in data.iter().filter(|c| seen.contains(c.customer_guid.as_str())) {
        tiers[assign_tier(c.requests, table).index - 1] += 1;
    }
    let tier_census = tiers
        .into_iter()
        .enumerate()
        .map(|(i, customers)| TierCount {
            tier: i + 1,
            customers,
        })
        .collect();

    let mut license_census = BTreeMap::new();
    for c in &data {
        *license_census.entry(c.licenses).or_insert(0) += 1;
    }

    let streaks = findings
        .iter()
        .map(|f| {
            let mut months = 1;
            let mut m = month.pred();
            while history.get(&m).is_some_and(|g| g.contains(&f.customer_guid)) {
                months += 1;
                m = m.pred();
            }
            Streak {
                customer_guid: f.customer_guid.clone(),
                months,
            }
        })
        .collect();

    Ok(AuditReport {
        month,
        multiplier,
        findings,
        tier_census,
        license_census,
        streaks,
    })
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Audit report for {}", self.month);
        let _ = writeln!(out, "Multiplier: {}", self.multiplier);
        let _ = writeln!(out);
        let _ = writeln!(out, "Findings ({}):", self.findings.len());
        if self.findings.is_empty() {
            let _ = writeln!(out, "  none");
        }
        for f in &self.findings {
            let ratio = if f.ratio.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.2}", f.ratio)
            };
            let _ = writeln!(
                out,
                "  {}  licenses={} requests={} baseline={:.1} ratio={} reason={}",
                f.customer_guid,
                f.licenses,
                f.requests,
                f.baseline,
                ratio,
                f.reason.as_str()
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Tier census:");
        for t in &self.tier_census {
            let _ = writeln!(out, "  tier {}: {}", t.tier, t.customers);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "License census:");
        for (l, n) in &self.license_census {
            let _ = writeln!(out, "  {l} license(s): {n}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Streaks:");
        if self.streaks.is_empty() {
            let _ = writeln!(out, "  none");
        }
        for s in &self.streaks {
            let _ = writeln!(out, "  {}: {} month(s)", s.customer_guid, s.months);
        }
        out
    }
}

pub fn report_path(audit_dir: &Path, month: MonthKey) -> PathBuf {
    audit_dir.join(format!("{month}.json"))
}

/// Writes `YYYY-MM.json` and `YYYY-MM.txt` into `audit_dir`.
pub fn write_report(audit_dir: &Path, report: &AuditReport) -> Result<()> {
    fs::create_dir_all(audit_dir).map_err(|e| Error::io(audit_dir, e))?;
    let json = report_path(audit_dir, report.month);
    fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    let txt = audit_dir.join(format!("{}.txt", report.month));
    fs::write(&txt, report.render_text()).map_err(|e| Error::io(&txt, e))?;
    Ok(())
}

/// Reads every `YYYY-MM.json` report in `audit_dir` strictly before
/// `before`. A missing directory is an empty history.
pub fn load_history(audit_dir: &Path, before: MonthKey) -> Result<AuditHistory> {
    let mut history = AuditHistory::new();
    let entries = match fs::read_dir(audit_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(history),
        Err(e) => return Err(Error::io(audit_dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(audit_dir, e))?.path();
        let Some(stem) = path.extension().filter(|x| *x == "json").and(path.file_stem()) else {
            continue;
        };
        let Ok(month) = stem.to_string_lossy().parse::<MonthKey>() else {
            continue;
        };
        if month >= before {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: AuditReport = serde_json::from_str(&text)?;
        history.insert(
            month,
            report.findings.into_iter().map(|f| f.customer_guid).collect(),
        );
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::{TierTable, DEFAULT_BREAKPOINTS};
    use proptest::prelude::*;

    fn m(s: &str) -> MonthKey {
        s.parse().unwrap()
    }

    fn cm(guid: &str, licenses: u64, requests: u64) -> CustomerMonth {
        CustomerMonth {
            customer_guid: guid.into(),
            licenses,
            requests,
            license_charge: 0.0,
        }
    }

    fn table() -> TierTable {
        TierTable::from_caps(&[535, 855, 1280, 1870, 2765, 4620, 6975], &DEFAULT_BREAKPOINTS, 0.008168).unwrap()
    }

    #[test]
    fn baseline_rules() {
        let pop = vec![(1, 100); 6];
        assert_eq!(typical_usage(&pop, 1).unwrap(), 100.0);
        assert_eq!(typical_usage(&pop, 0).unwrap(), 0.0);
        // No 3-license group: per-license median times 3.
        assert_eq!(typical_usage(&pop, 3).unwrap(), 300.0);
        assert!(typical_usage(&[], 1).is_err());
    }

    #[test]
    fn zero_license_and_heavy_single_license_flagged() {
        let mut data: Vec<CustomerMonth> = (0..20).map(|i| cm(&format!("c{i:02}"), 1, 200 + 10 * i)).collect();
        data.push(cm("ghost", 0, 229_565));
        data.push(cm("heavy", 1, 44_479));
        data.push(cm("idle", 0, 0));
        let f = flag_under_reporters(&data, m("2016-12"), 6.0).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].customer_guid, "ghost");
        assert_eq!(f[0].reason, AuditReason::ZeroLicenseActivity);
        assert!(f[0].ratio.is_infinite());
        assert_eq!(f[1].customer_guid, "heavy");
        assert_eq!(f[1].reason, AuditReason::ExceedsMultiplier);
        assert!(f[1].ratio > 6.0);
    }

    #[test]
    fn at_baseline_not_flagged() {
        let data: Vec<CustomerMonth> = (0..5).map(|i| cm(&format!("c{i}"), 2, 500)).collect();
        assert!(flag_under_reporters(&data, m("2016-01"), 6.0).unwrap().is_empty());
        assert!(flag_under_reporters(&data, m("2016-01"), 1.0).is_err());
    }

    #[test]
    fn finding_json_uses_inf_string() {
        let f = AuditFinding {
            customer_guid: "x".into(),
            month: m("2016-12"),
            licenses: 0,
            requests: 5,
            baseline: 0.0,
            ratio: f64::INFINITY,
            reason: AuditReason::ZeroLicenseActivity,
        };
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"ratio\":\"inf\""));
        assert!(s.contains("\"reason\":\"zero_license_activity\""));
        let back: AuditFinding = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }

    fn lic(guid: &str, users: u64) -> LicenseRecord {
        LicenseRecord {
            customer_guid: guid.into(),
            end_users: users,
            effective: m("2016-01"),
            expiration: m("2017-01"),
            invoiced_amount: "120.00".parse().unwrap(),
            channel: "direct".into(),
        }
    }

    fn usage(guid: &str, month: &str, n: u64) -> UsageRecord {
        UsageRecord {
            customer_guid: guid.into(),
            month: m(month),
            request_count: n,
        }
    }

    #[test]
    fn report_census_and_streaks() {
        let mut licenses: Vec<LicenseRecord> = (0..6).map(|i| lic(&format!("a{i}"), 1)).collect();
        licenses.extend((0..3).map(|i| lic(&format!("b{i}"), 2)));
        let mut rows = Vec::new();
        for month in ["2016-03", "2016-04", "2016-05"] {
            for i in 0..6 {
                rows.push(usage(&format!("a{i}"), month, 300));
            }
            for i in 0..3 {
                rows.push(usage(&format!("b{i}"), month, 900));
            }
            rows.push(usage("ghost", month, 50_000));
        }
        let dir = tempfile::tempdir().unwrap();
        for month in ["2016-03", "2016-04", "2016-05"] {
            let h = load_history(dir.path(), m(month)).unwrap();
            let r = monthly_audit_report(m(month), &licenses, &rows, &table(), 6.0, &h).unwrap();
            write_report(dir.path(), &r).unwrap();
        }
        let h = load_history(dir.path(), m("2016-05")).unwrap();
        let r = monthly_audit_report(m("2016-05"), &licenses, &rows, &table(), 6.0, &h).unwrap();
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.streaks, vec![Streak { customer_guid: "ghost".into(), months: 3 }]);
        assert_eq!(r.license_census[&1], 6);
        assert_eq!(r.license_census[&2], 3);
        assert_eq!(r.license_census[&0], 1);
        assert_eq!(r.tier_census[0].customers, 6);
        assert_eq!(r.tier_census[2].customers, 3);
        assert_eq!(r.tier_census[7].customers, 1);

        let before = fs::read(report_path(dir.path(), m("2016-05"))).unwrap();
        write_report(dir.path(), &r).unwrap();
        assert_eq!(before, fs::read(report_path(dir.path(), m("2016-05"))).unwrap());

        assert!(matches!(
            monthly_audit_report(m("2017-05"), &licenses, &rows, &table(), 6.0, &h),
            Err(Error::MonthNotCovered(_))
        ));
    }

    #[test]
    fn clean_month_has_empty_findings() {
        let licenses: Vec<LicenseRecord> = (0..6).map(|i| lic(&format!("a{i}"), 1)).collect();
        let rows: Vec<UsageRecord> = (0..6).map(|i| usage(&format!("a{i}"), "2016-02", 100 + i)).collect();
        let r = monthly_audit_report(m("2016-02"), &licenses, &rows, &table(), 6.0, &AuditHistory::new()).unwrap();
        assert!(r.findings.is_empty());
        assert_eq!(r.tier_census.iter().map(|t| t.customers).sum::<usize>(), 6);
        assert!(r.render_text().contains("Findings (0):\n  none"));
    }

    fn arb_population() -> impl Strategy<Value = Vec<(u64, u64)>> {
        prop::collection::vec((0u64..6, 0u64..5_000), 1..80)
    }

    fn data_of(pop: &[(u64, u64)]) -> Vec<CustomerMonth> {
        pop.iter()
            .enumerate()
            .map(|(i, (l, r))| cm(&format!("g{i:03}"), *l, *r))
            .collect()
    }

    proptest! {
        #[test]
        fn baseline_matches_grouping_oracle(pop in arb_population(), lic in 0u64..8) {
            let got = typical_usage(&pop, lic);
            let mut groups: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            for (l, r) in &pop {
                groups.entry(*l).or_default().push(*r);
            }
            let med = |mut v: Vec<f64>| {
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
            };
            let expected = if lic == 0 {
                Some(0.0)
            } else {
                match groups.get(&lic) {
                    Some(g) if g.len() >= 5 => Some(med(g.iter().map(|&r| r as f64).collect())),
                    _ => {
                        let per: Vec<f64> = pop.iter().filter(|p| p.0 > 0).map(|p| p.1 as f64 / p.0 as f64).collect();
                        if per.is_empty() { None } else { Some(med(per) * lic as f64) }
                    }
                }
            };
            match expected {
                Some(e) => prop_assert!((got.unwrap() - e).abs() <= 1e-9 * e.max(1.0)),
                None => prop_assert!(got.is_err()),
            }
        }

        #[test]
        fn findings_properties(pop in arb_population(), k1 in 1.5f64..10.0, dk in 0.0f64..10.0) {
            let data = data_of(&pop);
            let month = m("2016-06");
            let Ok(low) = flag_under_reporters(&data, month, k1) else { return Ok(()); };
            let high = flag_under_reporters(&data, month, k1 + dk).unwrap();
            let exceeds = |f: &[AuditFinding]| f.iter().filter(|f| f.reason == AuditReason::ExceedsMultiplier).count();
            let zero = |f: &[AuditFinding]| f.iter().filter(|f| f.reason == AuditReason::ZeroLicenseActivity).cloned().collect::<Vec<_>>();
            prop_assert!(exceeds(&high) <= exceeds(&low));
            prop_assert_eq!(zero(&high), zero(&low));
            for f in &low {
                prop_assert!(f.requests > 0);
                prop_assert!(f.reason == AuditReason::ZeroLicenseActivity || f.ratio > k1);
            }
            prop_assert!(low.windows(2).all(|w| w[0].ratio >= w[1].ratio));
        }
    }
}

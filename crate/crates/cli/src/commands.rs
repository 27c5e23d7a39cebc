use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use superres_core::certificate::{check_conditions, solve_certificate, KernelEval};
use superres_core::tsystems::{f_sequence_check, p_sequence, random_shifts, tsys_monte_carlo};
use superres_core::{
    gen_population, gen_smlm2d, run_population, Domain, SamplingMeasure, SweepRow, Weighting,
};

use crate::config::{ExperimentConfig, ExperimentKind, SCHEMA_VERSION};
use crate::record::{CertifyRecord, Dataset, Items, LemmaRecord, RunRecord, SweepPoint};
use crate::Failure;

fn out_dir(out: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = out.ok_or_else(|| Failure::Validation("this command needs --out DIR".into()))?;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Io)?;
    Ok(dir.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::Io(anyhow::Error::new(e).context(format!("writing {}", path.display())));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

fn generate(cfg: &ExperimentConfig) -> Result<Items, Failure> {
    match cfg.experiment {
        ExperimentKind::Boundary | ExperimentKind::Central | ExperimentKind::Pair => {
            Ok(Items::OneD(gen_population(&cfg.population_spec(cfg.separation())?)?))
        }
        ExperimentKind::Demo2d => Ok(Items::TwoD(gen_smlm2d(&cfg.smlm2d_spec())?)),
        other => Err(Failure::Validation(format!(
            "experiment {other:?} does not describe a single population; use sweep, certify or verify-lemmas"
        ))),
    }
}

pub fn simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<String, Failure> {
    let items = generate(cfg)?;
    let dir = out_dir(out)?;
    let n = items.len();
    write_json(&dir.join("dataset.json"), &Dataset::new(cfg.clone(), items))?;
    Ok(format!("wrote {n} images to {}", dir.join("dataset.json").display()))
}

fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<Items, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading dataset {}", path.display()))
        .map_err(Failure::Io)?;
    let ds: Dataset =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("dataset {}: {e}", path.display())))?;
    if ds.schema_version != SCHEMA_VERSION {
        return Err(Failure::Validation(format!(
            "dataset schema_version {} is not {SCHEMA_VERSION}",
            ds.schema_version
        )));
    }
    let same = ds.config.experiment == cfg.experiment
        && match cfg.experiment {
            ExperimentKind::Demo2d => ds.config.smlm2d_spec() == cfg.smlm2d_spec(),
            _ => ds.config.population_spec(ds.config.separation())? == cfg.population_spec(cfg.separation())?,
        };
    if !same {
        return Err(Failure::Validation(
            "dataset was generated from a different population than the config describes".into(),
        ));
    }
    if ds.items.len() != cfg.count() {
        return Err(Failure::Validation(format!(
            "dataset holds {} images, config expects {}",
            ds.items.len(),
            cfg.count()
        )));
    }
    Ok(ds.items)
}

pub fn solve(
    cfg: &ExperimentConfig,
    dataset: Option<&Path>,
    weighting: Weighting,
    out: Option<&Path>,
) -> Result<String, Failure> {
    let items = match dataset {
        Some(p) => load_dataset(p, cfg)?,
        None => generate(cfg)?,
    };
    let dir = out_dir(out)?;
    let settings = cfg.settings(weighting);
    let domain = Domain::unit();
    let (summary, path) = match items {
        Items::OneD(items) => {
            let run = run_population(&items, &superres_core::Gaussian::new(cfg.sigma)?, &domain, &settings)?;
            let s = run.summary;
            let rec = RunRecord::new("solve", cfg.clone(), weighting, vec![SweepPoint { sweep_value: None, run }]);
            let path = dir.join("run.json");
            write_json(&path, &rec)?;
            (s, path)
        }
        Items::TwoD(items) => {
            let psf = cfg.smlm2d_spec().psf()?;
            let run = run_population(&items, &psf, &Domain::<2>::unit(), &settings)?;
            let s = run.summary;
            let rec = RunRecord::new("solve", cfg.clone(), weighting, vec![SweepPoint { sweep_value: None, run }]);
            let path = dir.join("run.json");
            write_json(&path, &rec)?;
            (s, path)
        }
    };
    Ok(format!(
        "{} images, mean F {:.4}, median F {:.4}; wrote {}",
        summary.n_images,
        summary.mean_f,
        summary.median_f,
        path.display()
    ))
}

pub fn sweep(cfg: &ExperimentConfig, weighting: Weighting, out: Option<&Path>) -> Result<String, Failure> {
    if !cfg.is_sweep() {
        return Err(Failure::Validation(format!(
            "sweep needs experiment \"separation\" or \"noise\", got {:?}",
            cfg.experiment
        )));
    }
    let dir = out_dir(out)?;
    let settings = cfg.settings(weighting);
    let rows = superres_core::run_sweep(&cfg.sweep_values(), |d| cfg.population_spec(d).map_err(core_error), &settings)?;
    let csv_rows: Vec<SweepRow> = rows.iter().map(|(r, _)| *r).collect();
    let points = rows
        .into_iter()
        .map(|(r, run)| SweepPoint {
            sweep_value: Some(r.sweep_value),
            run,
        })
        .collect();
    write_csv(&dir.join("sweep.csv"), &csv_rows)?;
    write_json(&dir.join("run.json"), &RunRecord::new("sweep", cfg.clone(), weighting, points))?;
    let mut msg = String::from("sweep_value  mean_f  std_f  n_images\n");
    for r in &csv_rows {
        msg += &format!("{:>11.4}  {:.4}  {:.4}  {}\n", r.sweep_value, r.mean_f, r.std_f, r.n_images);
    }
    msg += &format!("wrote {}", dir.join("sweep.csv").display());
    Ok(msg)
}

fn core_error(f: Failure) -> superres_core::Error {
    superres_core::Error::InvalidArgument(f.to_string())
}

pub fn certify(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<String, Failure> {
    if cfg.experiment != ExperimentKind::Certify {
        return Err(Failure::Validation(format!(
            "certify needs experiment \"certify\", got {:?}",
            cfg.experiment
        )));
    }
    let psf = superres_core::Gaussian::new(cfg.sigma)?;
    let sampling = SamplingMeasure::uniform_grid(cfg.n(), 0.0, 1.0)?;
    let ke = KernelEval::new(&psf, &sampling);
    let domain = Domain::unit();
    let conditions = check_conditions(&ke, &cfg.locations, &domain, cfg.tuples, cfg.rho, cfg.seed)?;
    let (certificate, error) = match solve_certificate(&ke, &cfg.locations, &domain) {
        Ok(c) => (Some(c), None),
        Err(e @ superres_core::Error::ConditionFailure { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let rec = CertifyRecord {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        conditions,
        certificate,
        error,
    };
    if let Some(out) = out {
        let dir = out_dir(Some(out))?;
        write_json(&dir.join("certificate.json"), &rec)?;
    }
    let c = &rec.conditions;
    let mut msg = format!(
        "positivity: min w = {:.3e}\nindependence: smallest singular value {:.3e} (ratio {:.3e})\n\
         determinantal: {} tuples, {} positive, {} negative, {} uncertified\n",
        c.positivity_min_w,
        c.independence_min_singular,
        c.independence_ratio,
        c.samples_tested,
        c.determinantal_positive,
        c.determinantal_negative,
        c.determinantal_uncertified
    );
    for w in &c.warnings {
        msg += &format!("warning: {w}\n");
    }
    match &rec.certificate {
        Some(cert) if cert.is_valid() => {
            let r = &cert.margin_report;
            msg += &format!(
                "certificate: {:?} branch, min off-support margin {:.3e}, interpolation residual {:.1e}",
                cert.branch, r.min_margin, r.interp_residual
            );
            Ok(msg)
        }
        Some(cert) => Err(Failure::Certificate(format!(
            "{msg}certificate invalid: {}",
            cert.margin_report.warnings.join("; ")
        ))),
        None => Err(Failure::Certificate(format!("{msg}{}", rec.error.unwrap_or_default()))),
    }
}

pub fn verify_lemmas(max_order: usize, max_m: usize, draws: usize, seed: u64, out: Option<&Path>) -> Result<String, Failure> {
    if max_order > superres_core::tsystems::MAX_ORDER {
        return Err(Failure::Validation(format!(
            "max order must be <= {}",
            superres_core::tsystems::MAX_ORDER
        )));
    }
    if draws == 0 {
        return Err(Failure::Validation("draws must be >= 1".into()));
    }
    let shifts = random_shifts(max_order, seed);
    let (orders, f_err) = match f_sequence_check(max_order, &shifts) {
        Ok(r) => (r.orders, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let p_ok = p_sequence(max_order, &shifts)?
        .iter()
        .enumerate()
        .all(|(i, p)| p.leading() == superres_core::tsystems::rat(1 << i, 1));
    let mc: Vec<_> = (1..=max_m)
        .map(|m| tsys_monte_carlo(m, draws, seed.wrapping_add(m as u64)))
        .collect::<superres_core::Result<_>>()?;
    let passed = f_err.is_none() && p_ok && mc.iter().all(|r| r.passed());

    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let mut table = format!("{:<28} {:<6} detail\n", "check", "result");
    for o in &orders {
        table += &format!(
            "{:<28} {:<6} degree {}, constant square {}\n",
            format!("f-sequence order {}", o.order),
            "PASS",
            o.f_degree,
            o.constant_square
        );
    }
    if let Some(e) = &f_err {
        table += &format!("{:<28} {:<6} {e}\n", "f-sequence", "FAIL");
    }
    table += &format!("{:<28} {:<6} 2^i for i <= {max_order}\n", "p-sequence leading coeffs", mark(p_ok));
    for r in &mc {
        table += &format!(
            "{:<28} {:<6} {} draws: +{} -{} uncertified {}\n",
            format!("Gaussian determinant M={}", r.m),
            mark(r.passed()),
            r.draws,
            r.positive,
            r.negative,
            r.uncertified
        );
    }

    if let Some(out) = out {
        let dir = out_dir(Some(out))?;
        let rec = LemmaRecord {
            schema_version: SCHEMA_VERSION,
            max_order,
            seed,
            shifts: shifts.iter().map(ToString::to_string).collect(),
            orders,
            f_sequence_error: f_err,
            p_leading_ok: p_ok,
            monte_carlo: mc,
            passed,
        };
        write_json(&dir.join("lemmas.json"), &rec)?;
    }
    let table = table.trim_end().to_string();
    if passed {
        Ok(table)
    } else {
        Err(Failure::Lemma(table))
    }
}

#[derive(Serialize)]
struct PointRow {
    frame: usize,
    x: f64,
    y: f64,
    mass: f64,
}

pub fn demo2d(cfg: &ExperimentConfig, weighting: Weighting, out: Option<&Path>) -> Result<String, Failure> {
    if cfg.experiment != ExperimentKind::Demo2d {
        return Err(Failure::Validation(format!(
            "demo2d needs experiment \"demo2d\", got {:?}",
            cfg.experiment
        )));
    }
    let dir = out_dir(out)?;
    let spec = cfg.smlm2d_spec();
    let run = superres_core::run_smlm2d(&spec, &cfg.settings(weighting))?;
    let mut truth = Vec::new();
    let mut est = Vec::new();
    for img in &run.images {
        for (p, c) in img.truth.locations().iter().zip(img.truth.amplitudes()) {
            truth.push(PointRow {
                frame: img.index,
                x: p[0],
                y: p[1],
                mass: *c,
            });
        }
        for a in &img.estimate.atoms {
            est.push(PointRow {
                frame: img.index,
                x: a.location[0],
                y: a.location[1],
                mass: a.mass,
            });
        }
    }
    write_csv(&dir.join("truth.csv"), &truth)?;
    write_csv(&dir.join("estimate.csv"), &est)?;
    let s = run.summary;
    write_json(
        &dir.join("run.json"),
        &RunRecord::new("demo2d", cfg.clone(), weighting, vec![SweepPoint { sweep_value: None, run }]),
    )?;
    Ok(format!(
        "{} frames, {} true and {} estimated sources, mean F(r = {:.4}) {:.4}; wrote {}",
        s.n_images,
        truth.len(),
        est.len(),
        cfg.radius(),
        s.mean_f,
        dir.display()
    ))
}

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use spx_core::attribution::explain::Instance;
use spx_core::detector::DetectorSpec;
use spx_core::fixtures;
use spx_core::quality::MatchOptions;
use spx_core::reporting::{
    aggregate_global, render_error_map, render_pictogram, render_relevance_map, run_convergence, select_biggest,
    summarize, Band, ConvergenceConfig, Subject,
};
use spx_core::segmentation::{AbstractionLevel, AbstractionScheme};
use spx_core::{exact_shapley, explain_instance, BetaParams, BootstrapConfig, Error, ExplainConfig, ExplanationReport, Result};

use crate::{AggregateArgs, BandArg, ConvergenceArgs, EstimatorArgs, ExplainArgs, FixtureKind, GenerateArgs, OracleArgs};

const DETECTOR_FILE: &str = "detector.txt";

fn parse_detector(spec: &str, timeout: f64) -> Result<DetectorSpec> {
    if !(timeout > 0.0 && timeout.is_finite()) {
        return Err(Error::Config(format!("timeout must be positive, got {timeout}")));
    }
    Ok(match spec.parse::<DetectorSpec>()? {
        DetectorSpec::External { program, args, .. } => DetectorSpec::External {
            program,
            args,
            timeout: Duration::from_secs_f64(timeout),
        },
        other => other,
    })
}

fn base_config(est: &EstimatorArgs) -> Result<ExplainConfig> {
    let config = ExplainConfig {
        beta: BetaParams::new(est.alpha, est.beta)?,
        bootstrap: BootstrapConfig {
            rounds: est.bootstrap_rounds,
            fraction: est.bootstrap_fraction,
        },
        resample_noise: est.resample_noise,
        matching: MatchOptions {
            min_score: est.min_score,
            label: est.match_label.clone(),
        },
        workers: est.workers,
        ..ExplainConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn load_instance(args: &ExplainArgs) -> Result<Instance> {
    if let Some(dir) = &args.instance {
        return Instance::load_dir(dir);
    }
    let missing = |flag: &str| Error::Config(format!("--{flag} is required without --instance"));
    let image = args.image.as_deref().ok_or_else(|| missing("image"))?;
    let segmentation = args.segmentation.as_deref().ok_or_else(|| missing("segmentation"))?;
    let gt = args.gt.as_deref().ok_or_else(|| missing("gt"))?;
    let name = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Instance::load(name, image, segmentation, args.labels.as_deref(), gt)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let detector = parse_detector(&args.detector, args.estimator.timeout)?;
    let config = ExplainConfig {
        method: args.method.into(),
        masking: args.masking.into(),
        level: AbstractionLevel::new(args.abstraction)?,
        n_samples: args.samples,
        seed: args.seed,
        ..base_config(&args.estimator)?
    };
    let instance = load_instance(args)?;
    let explanation = explain_instance(&instance, &detector, &config)?;

    fs::create_dir_all(&args.out)?;
    write(&args.out.join("report.json"), &explanation.report.to_json()?)?;
    let relevance = render_relevance_map(&instance.image, &explanation.map, &explanation.result)?;
    write(&args.out.join("relevance.png"), &relevance)?;
    if explanation.result.errors.is_some() {
        let errors = render_error_map(&instance.image, &explanation.map, &explanation.result)?;
        write(&args.out.join("error.png"), &errors)?;
    } else {
        log::warn!("no bootstrap errors for this budget; error.png not written");
    }
    Ok(())
}

/// Expands globs; plain paths pass through unchanged. Sorted, deduplicated.
fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let matches = glob::glob(p).map_err(|e| Error::Config(format!("bad pattern {p:?}: {e}")))?;
        let mut found = false;
        for m in matches {
            out.push(m.map_err(|e| Error::Io(e.into()))?);
            found = true;
        }
        if !found && !p.contains(['*', '?', '[']) {
            out.push(PathBuf::from(p));
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn aggregate(args: &AggregateArgs) -> Result<()> {
    let paths = expand(&args.reports)?;
    let reports = paths
        .iter()
        .map(|p| Ok(serde_json::from_slice::<ExplanationReport>(&fs::read(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let level = reports.first().ok_or(Error::EmptyInput)?.abstraction;
    let scheme = AbstractionScheme::bodypix();
    let aggregate = aggregate_global(&reports, scheme.vocabulary(level)?)?;

    fs::create_dir_all(&args.out)?;
    write(&args.out.join("aggregate.json"), &aggregate.to_json()?)?;
    if level == 0 {
        log::warn!("level 0 has no pictogram; pictogram.svg not written");
    } else {
        let svg = render_pictogram(&aggregate.parts, AbstractionLevel::new(level)?)?;
        write(&args.out.join("pictogram.svg"), &svg)?;
    }
    Ok(())
}

/// Instance directories under `root`, each with its optional detector.
fn load_subjects(root: &Path, fallback: Option<&DetectorSpec>, timeout: f64) -> Result<Vec<Subject>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|d| d.join("image.png").is_file());
    dirs.sort();
    dirs.iter()
        .map(|dir| {
            let instance = Instance::load_dir(dir)?;
            let own = dir.join(DETECTOR_FILE);
            let detector = if own.is_file() {
                parse_detector(fs::read_to_string(&own)?.trim(), timeout)?
            } else {
                fallback.cloned().ok_or_else(|| {
                    Error::Config(format!("{} has no {DETECTOR_FILE} and no --detector was given", dir.display()))
                })?
            };
            Ok(Subject { instance, detector })
        })
        .collect()
}

pub fn convergence(args: &ConvergenceArgs) -> Result<()> {
    let fallback = args
        .detector
        .as_deref()
        .map(|d| parse_detector(d, args.estimator.timeout))
        .transpose()?;
    let config = ConvergenceConfig {
        methods: args.methods.iter().map(|&m| m.into()).collect(),
        maskings: args.maskings.iter().map(|&m| m.into()).collect(),
        levels: args
            .levels
            .iter()
            .map(|&l| AbstractionLevel::new(l))
            .collect::<Result<_>>()?,
        ladder: spx_core::reporting::parse_ladder(&args.ladder)?,
        seeds: (args.seed..args.seed + args.seeds).collect(),
        band: match args.band {
            BandArg::Instances => Band::Instances,
            BandArg::Seeds => Band::Seeds,
        },
        base: ExplainConfig {
            workers: 1,
            ..base_config(&args.estimator)?
        },
        workers: args.estimator.workers,
    };
    let mut subjects = load_subjects(&args.instances, fallback.as_ref(), args.estimator.timeout)?;
    if subjects.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(top) = args.top {
        subjects = select_biggest(subjects, top, |s| &s.instance);
    }
    let run = run_convergence(&subjects, &config)?;
    for cell in &run.skipped {
        log::warn!("skipped {} n={}: {}", cell.method, cell.n_samples, cell.reason);
    }
    let summary = summarize(&run.table, config.band, run.skipped);

    fs::create_dir_all(&args.out)?;
    write(&args.out.join("convergence.csv"), &run.table.to_csv()?)?;
    write(&args.out.join("summary.json"), &summary.to_json()?)?;
    Ok(())
}

pub fn oracle(args: &OracleArgs) -> Result<()> {
    let form = match args.detector.parse::<DetectorSpec>()? {
        DetectorSpec::Synthetic(form) => form,
        other => {
            return Err(Error::DetectorSpec(format!(
                "the oracle needs a synthetic:<form> detector, got {other}"
            )))
        }
    };
    let parts = args.parts.unwrap_or_else(|| form.min_parts());
    let mut failure = None;
    let scores = exact_shapley(parts, |p| match form.value(p) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let out = serde_json::json!({
        "parts": parts,
        "scores": scores,
        "q_full": form.value(&vec![1.0; parts])?,
        "q_empty": form.value(&vec![0.0; parts])?,
    });
    let mut bytes = serde_json::to_vec_pretty(&out)?;
    bytes.push(b'\n');
    match &args.out {
        Some(path) => write(path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    match args.kind {
        FixtureKind::Pedestrian => {
            for instance in fixtures::pedestrian_set(args.count, args.seed) {
                instance.save_dir(&args.out.join(&instance.name))?;
            }
        }
        FixtureKind::Interaction => {
            for subject in fixtures::interaction_subjects(args.count, args.seed) {
                let dir = args.out.join(&subject.instance.name);
                subject.instance.save_dir(&dir)?;
                write(&dir.join(DETECTOR_FILE), format!("{}\n", subject.detector).as_bytes())?;
            }
        }
    }
    Ok(())
}

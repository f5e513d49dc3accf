//! Named end-to-end runs of the simulation studies and bundled datasets.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use nigvb::distributions::{sample_mixture, MixtureSpec};
use nigvb::evaluation::{adjusted_rand_index, Partition};
use nigvb::io::{
    self, write_labels_csv, write_sample, Dataset, FitConfig, IoError, ModelKind, RunRecord,
};

use crate::{evaluation_report, labels_path, partition_from_strings, simulation_preset, CliError};
use crate::{EXIT_NOT_CONVERGED, EXIT_OK};

pub const PRESET_NAMES: &[&str] = &[
    "study1",
    "study2",
    "study4",
    "study5",
    "faithful",
    "crabs",
    "fish",
    "fish-weight",
    "enzyme",
];

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// One of study1, study2, study4, study5, faithful, crabs, fish,
    /// fish-weight, enzyme.
    pub preset: String,
    #[arg(long, default_value = "reproduce-out")]
    pub out_dir: PathBuf,
    /// Directory holding the bundled CSV files.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Overrides the preset's initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// First simulation seed; replicate `r` uses `data_seed + r`.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Number of simulated datasets (simulation presets only).
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
}

#[derive(Debug, Clone)]
pub enum Source {
    Simulated { spec: MixtureSpec, n: usize },
    File(&'static str),
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub source: Source,
    pub config: FitConfig,
}

fn cols(names: &[&str]) -> Option<Vec<String>> {
    Some(names.iter().map(|s| s.to_string()).collect())
}

/// The reference configuration for each named run.
pub fn preset(name: &str) -> Result<Preset, CliError> {
    let name = PRESET_NAMES
        .iter()
        .copied()
        .find(|&p| p == name)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset {name:?}; expected one of {PRESET_NAMES:?}"
            ))
        })?;
    let base = FitConfig::default();
    let simulated = |model, g_init, seed| -> Result<Preset, CliError> {
        let (spec, n) = simulation_preset(name)?;
        let d = spec.components.dim();
        let columns = Some((1..=d).map(|j| format!("y{j}")).collect());
        let config = FitConfig {
            model,
            g_init,
            seed,
            columns,
            label_column: Some("label".into()),
            ..FitConfig::default()
        };
        Ok(Preset {
            name,
            source: Source::Simulated { spec, n },
            config,
        })
    };
    let file = |file, config| {
        Ok(Preset {
            name,
            source: Source::File(file),
            config,
        })
    };
    match name {
        "study1" | "study2" => simulated(ModelKind::Unig, 10, 1),
        "study4" => simulated(ModelKind::Mnig, 5, 0),
        "study5" => simulated(ModelKind::Mnig, 10, 1),
        "faithful" => file(
            "faithful.csv",
            FitConfig {
                model: ModelKind::Mnig,
                g_init: 7,
                seed: 1,
                columns: cols(&["eruptions", "waiting"]),
                ..base
            },
        ),
        "crabs" => file(
            "crabs.csv",
            FitConfig {
                model: ModelKind::Mnig,
                g_init: 10,
                seed: 1,
                columns: cols(&["FL", "RW", "CL", "CW", "BD"]),
                label_column: Some("group".into()),
                ..base
            },
        ),
        "fish" => file(
            "fish.csv",
            FitConfig {
                model: ModelKind::Mnig,
                g_init: 10,
                seed: 1,
                columns: cols(&["Length3", "Height", "Width"]),
                label_column: Some("Species".into()),
                ..base
            },
        ),
        "fish-weight" => file(
            "fish.csv",
            FitConfig {
                model: ModelKind::Mnig,
                g_init: 10,
                seed: 1,
                columns: cols(&["Length3", "Weight", "Width"]),
                label_column: Some("Species".into()),
                ..base
            },
        ),
        "enzyme" => file(
            "enzyme.csv",
            FitConfig {
                model: ModelKind::Unig,
                g_init: 5,
                seed: 1,
                columns: cols(&["activity"]),
                ..base
            },
        ),
        _ => unreachable!("name checked above"),
    }
}

/// Summary of one fit within a reproduction.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub record: RunRecord,
    pub data: Dataset,
    pub ari: Option<f64>,
}

/// Fits `input` under `config`, saving the record and labels as `<stem>.json`
/// and `<stem>.labels.csv` in `out_dir`.
pub fn fit_and_save(
    config: &FitConfig,
    input: &Path,
    out_dir: &Path,
    stem: &str,
) -> Result<Outcome, CliError> {
    let (record, data) = io::run_fit(config, input)?;
    let out = out_dir.join(format!("{stem}.json"));
    record.save(&out)?;
    write_labels_csv(&labels_path(&out), "label", record.payload.result.labels())?;
    let ari = match &data.labels {
        Some(truth) => {
            let fitted = Partition::new(record.payload.result.labels().to_vec())?;
            Some(adjusted_rand_index(
                &fitted,
                &partition_from_strings(truth),
            )?)
        }
        None => None,
    };
    Ok(Outcome { record, data, ari })
}

pub fn run(args: &ReproduceArgs) -> Result<u8, CliError> {
    let mut p = preset(&args.preset)?;
    if let Some(seed) = args.seed {
        p.config.seed = seed;
    }
    fs::create_dir_all(&args.out_dir).map_err(|source| IoError::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    match &p.source {
        Source::Simulated { spec, n } => {
            let mut selected = 0;
            let mut ari_sum = 0.0;
            for r in 0..args.replicates {
                let seed = args.data_seed + r;
                let stem = format!("{}-data{seed}", p.name);
                let csv = args.out_dir.join(format!("{stem}.csv"));
                write_sample(&csv, &sample_mixture(spec, *n, seed)?, spec, seed)?;
                let o = fit_and_save(&p.config, &csv, &args.out_dir, &stem)?;
                let g = o.record.payload.result.n_components();
                let ari = o.ari.unwrap_or(f64::NAN);
                selected += usize::from(g == spec.components.len());
                ari_sum += ari;
                println!("{stem}: G = {g}, ARI = {ari:.4}");
            }
            println!(
                "{}: true G selected in {selected}/{} runs, mean ARI = {:.4}",
                p.name,
                args.replicates,
                ari_sum / args.replicates as f64
            );
            Ok(EXIT_OK)
        }
        Source::File(file) => {
            let input = args.data_dir.join(file);
            let o = fit_and_save(&p.config, &input, &args.out_dir, p.name)?;
            let result = &o.record.payload.result;
            println!(
                "{}: G = {} after {} iterations",
                p.name,
                result.n_components(),
                result.iterations()
            );
            if let Some(truth) = &o.data.labels {
                let fitted = Partition::new(result.labels().to_vec())?;
                print!(
                    "{}",
                    evaluation_report(&fitted, &partition_from_strings(truth))?
                );
            }
            Ok(if result.converged() {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            })
        }
    }
}

//! `tacauc`: simulate → preprocess → features → tune/train → cv/evaluate →
//! predict → explain → report, driven by one JSON config plus flag
//! overrides.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tacauc::config::{ModelConfig, RunConfig};
use tacauc::error::Error;
use tacauc::features::ModelVariant;
use tacauc::io;
use tacauc::runner::{self, CohortKind};

/// Environment variable holding the default config path.
const CONFIG_ENV: &str = "TACAUC_CONFIG";

#[derive(Parser)]
#[command(
    name = "tacauc",
    version,
    about = "Limited-sampling tacrolimus exposure prediction toolkit",
    propagate_version = true
)]
struct Cli {
    /// JSON run configuration; flags override file values.
    /// Falls back to $TACAUC_CONFIG, then to built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread cap for parallel folds, grid points and explanations.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Model variant override (e.g. full16, fixed3, fixed3_demog,
    /// flex_delta, flex_est_poppk).
    #[arg(long, global = true)]
    model_variant: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CohortArg {
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: profile, patient and ground-truth CSVs.
    Simulate {
        #[arg(long, value_enum, default_value = "dev")]
        cohort: CohortArg,
        /// Output directory for <cohort>_{profiles,patients,truth}.csv.
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Impute profiles to the full nominal grid and write reference AUCs.
    Preprocess {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        out_imputed: PathBuf,
        #[arg(long)]
        out_auc: PathBuf,
    },
    /// Build the configured variant's feature matrix and schema document.
    Features {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        patients: PathBuf,
        #[arg(long)]
        out_features: PathBuf,
        #[arg(long)]
        out_schemas: PathBuf,
    },
    /// Grouped k-fold grid search for the best hyperparameters.
    Tune {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        schemas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on all events and write the model file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        schemas: PathBuf,
        /// Use the best hyperparameters from a tune artifact.
        #[arg(long)]
        params_from: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
    },
    /// Leave-one-patient-out cross-validation on first-visit events.
    Cv {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        schemas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on a feature matrix.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        schemas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict AUC for feature rows or for a raw profile + patient record.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Feature-matrix input (needs --schemas).
        #[arg(long, requires = "schemas")]
        features: Option<PathBuf>,
        #[arg(long)]
        schemas: Option<PathBuf>,
        /// Restrict feature-matrix predictions to one patient.
        #[arg(long)]
        patient: Option<String>,
        #[arg(long)]
        visit: Option<u32>,
        /// Raw-profile input (needs --patients).
        #[arg(long, requires = "patients", conflicts_with = "features")]
        profile: Option<PathBuf>,
        #[arg(long)]
        patients: Option<PathBuf>,
    },
    /// Shapley attribution of model predictions.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Events to explain.
        #[arg(long)]
        features: PathBuf,
        /// Background set (typically the training feature matrix).
        #[arg(long)]
        background: PathBuf,
        #[arg(long)]
        schemas: PathBuf,
        #[arg(long)]
        out_phi: PathBuf,
        #[arg(long)]
        out_ranking: PathBuf,
    },
    /// Consolidated comparison: ML variants, dummy baseline and the MAP
    /// population-PK comparator.
    Report {
        #[arg(long)]
        dev_profiles: PathBuf,
        #[arg(long)]
        dev_patients: PathBuf,
        #[arg(long)]
        test_profiles: PathBuf,
        #[arg(long)]
        test_patients: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long)]
        out_fits: PathBuf,
        #[arg(long)]
        out_table: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => match std::env::var_os(CONFIG_ENV) {
            Some(path) => RunConfig::from_json_file(std::path::Path::new(&path))?,
            None => RunConfig::default(),
        },
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = Some(threads);
    }
    if let Some(variant) = &cli.model_variant {
        config.model = ModelConfig::from_variant(ModelVariant::parse(variant)?);
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli, config: &RunConfig) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate { cohort, out_dir } => {
            let (kind, prefix) = match cohort {
                CohortArg::Dev => (CohortKind::Dev, "dev"),
                CohortArg::Test => (CohortKind::Test, "test"),
            };
            let profiles = out_dir.join(format!("{prefix}_profiles.csv"));
            let patients = out_dir.join(format!("{prefix}_patients.csv"));
            let truth = out_dir.join(format!("{prefix}_truth.csv"));
            runner::simulate(config, kind, &profiles, &patients, &truth)?;
            println!(
                "wrote {} + {} + {}",
                profiles.display(),
                patients.display(),
                truth.display()
            );
        }
        Command::Preprocess { profiles, patients, out_imputed, out_auc } => {
            let prepared = runner::preprocess(config, profiles, patients, out_imputed, out_auc)?;
            println!("prepared {} profiles", prepared.len());
        }
        Command::Features { profiles, patients, out_features, out_schemas } => {
            let table =
                runner::build_features(config, profiles, patients, out_features, out_schemas)?;
            println!(
                "wrote {} events × {} features ({})",
                table.rows.len(),
                table.schema.len(),
                table.schema.schema_id
            );
        }
        Command::Tune { features, schemas, out } => {
            let outcome = runner::tune(config, features, schemas, out)?;
            println!(
                "searched {} grid points; best: rounds={} depth={} lr={}",
                outcome.grid_points,
                outcome.best.n_rounds,
                outcome.best.max_depth,
                outcome.best.learning_rate
            );
        }
        Command::Train { features, schemas, params_from, out_model } => {
            let params = match params_from {
                Some(path) => Some(io::read_json::<runner::TuneOutcome>(path)?.best),
                None => None,
            };
            let model = runner::train(config, features, schemas, params, out_model)?;
            println!(
                "trained {} trees on schema {}; wrote {}",
                model.trees.len(),
                model.schema_id,
                out_model.display()
            );
        }
        Command::Cv { features, schemas, out } => {
            let artifact = runner::cv(config, features, schemas, out)?;
            println!(
                "LOPO over {} events: relative RMSE {:.4} (dummy {:.4}), |PE|>15%: {:.2}%",
                artifact.n_events,
                artifact.report.relative_rmse,
                artifact.report.dummy_relative_rmse,
                artifact.report.pct_abs_pe_gt_15
            );
        }
        Command::Evaluate { model, features, schemas, out } => {
            let artifact = runner::evaluate(config, model, features, schemas, out)?;
            println!(
                "evaluated {} events: relative RMSE {:.4}, |PE|>15%: {:.2}%, clinical: {}",
                artifact.n_events,
                artifact.report.relative_rmse,
                artifact.report.pct_abs_pe_gt_15,
                artifact.report.clinically_applicable
            );
        }
        Command::Predict { model, features, schemas, patient, visit, profile, patients } => {
            let (model, _) = io::read_model_json(model)?;
            match (features, profile) {
                (Some(features), None) => {
                    let schemas = schemas.as_ref().expect("clap enforces --schemas");
                    let schema = io::read_schema_json(schemas, &model.schema_id)?;
                    let table = io::read_features_csv(features, &schema)?;
                    let selector =
                        patient.as_deref().map(|p| (p, *visit));
                    for (id, v, auc) in
                        runner::predict_from_features(&model, &table, selector)?
                    {
                        println!("{id},{v},{auc}");
                    }
                }
                (None, Some(profile_path)) => {
                    let patients_path = patients.as_ref().expect("clap enforces --patients");
                    let profiles = io::read_profiles_csv(profile_path)?;
                    let records = io::read_patients_csv(patients_path, &profiles)?;
                    for p in &profiles {
                        let record = records
                            .iter()
                            .find(|r| r.patient_id == p.patient_id)
                            .ok_or_else(|| {
                                Error::Config(format!("no patient record for {}", p.patient_id))
                            })?;
                        let auc = runner::predict_from_profile(&model, p, record, config)?;
                        println!("{},{},{auc}", p.patient_id, p.visit);
                    }
                }
                _ => {
                    return Err(Error::Config(
                        "predict needs either --features or --profile".into(),
                    ))
                }
            }
        }
        Command::Explain { model, features, background, schemas, out_phi, out_ranking } => {
            let (model, _) = io::read_model_json(model)?;
            let schema = io::read_schema_json(schemas, &model.schema_id)?;
            let explain_table = io::read_features_csv(features, &schema)?;
            let background_table = io::read_features_csv(background, &schema)?;
            let (_, outcome) = runner::explain(
                config,
                &model,
                &explain_table,
                &background_table,
                out_phi,
                out_ranking,
            )?;
            println!(
                "explained {} events against {} background rows; top feature: {}",
                outcome.n_explained,
                outcome.n_background,
                outcome.ranking.first().map(|r| r.feature.as_str()).unwrap_or("-")
            );
        }
        Command::Report {
            dev_profiles,
            dev_patients,
            test_profiles,
            test_patients,
            out_report,
            out_fits,
            out_table,
        } => {
            let report = runner::consolidated_report(
                config,
                dev_profiles,
                dev_patients,
                test_profiles,
                test_patients,
                out_report,
                out_fits,
                out_table,
            )?;
            print!("{}", runner::render_consolidated_table(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();

    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(threads) = config.threads {
        // Ignore the error when a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {}: {e}", e.code());
    if e.is_io() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

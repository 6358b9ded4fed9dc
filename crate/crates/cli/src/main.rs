use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hetem::io::{cmd_evaluate, cmd_extract_volume, cmd_fsc, cmd_simulate, cmd_train, RunConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "hetem", version, about = "Heterogeneous cryo-EM reconstruction with conditional pose prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Bimodal,
    Arm,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent.
    #[arg(long, value_enum, default_value = "bimodal")]
    preset: Preset,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => match self.preset {
                Preset::Bimodal => RunConfig::desk_bimodal(),
                Preset::Arm => RunConfig::desk_arm(),
            },
        };
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms and a particle stack.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory; resumes from an existing checkpoint in --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ablations: no_cpp, no_fch, no_pds, no_asn.
        #[arg(long, default_value = "")]
        flags: String,
        /// Overrides the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides the number of epochs with a frozen conformation head.
        #[arg(long)]
        fch_epochs: Option<usize>,
    },
    /// Compute metrics, FSC curves and representative volumes for a run.
    Evaluate {
        /// Analysis options are read from this file, else from the run directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Fourier shell correlation between two MRC volumes.
    Fsc {
        a: PathBuf,
        b: PathBuf,
        /// Write the curve as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        cutoff: f64,
    },
    /// Decode a volume from a checkpoint at a given latent.
    ExtractVolume {
        #[arg(long)]
        run: PathBuf,
        /// Output MRC file.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated latent coordinates; zeros when absent.
        #[arg(long)]
        z: Option<String>,
        /// Voxel size written to the header; taken from the run config when absent.
        #[arg(long)]
        apix: Option<f64>,
        #[arg(long)]
        force: bool,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HETEM_NUM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("HETEM_NUM_THREADS={v:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run_config_in(dir: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(&dir.join(hetem::io::pipeline::CONFIG_FILE))?)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();
    init_threads()?;
    let cli = Cli::parse();
    match cli.cmd {
        Command::Simulate { common, out } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.dataset.seed = s;
            }
            let summary = cmd_simulate(&cfg, &out, common.force)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train { common, data, out, flags, epochs, fch_epochs } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(f) = fch_epochs {
                cfg.train.fch_epochs = f;
            }
            cfg.train.flags.apply_ablations(&flags)?;
            let summary = cmd_train(&cfg, &data, &out, common.force, &mut |row| {
                println!(
                    "epoch {:>4}  sym {:.5}  kl {:.4}  cpp_rot {}  {:.1}s",
                    row.epoch,
                    row.loss_sym,
                    row.loss_kl,
                    row.loss_cpp_rot.map_or("-".into(), |v| format!("{v:.5}")),
                    row.wall_seconds
                );
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Evaluate { config, run, data, out, force } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => run_config_in(&run)?,
            };
            let metrics = cmd_evaluate(&cfg.analysis, &run, &data, &out, force)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Fsc { a, b, out, cutoff } => {
            if !(cutoff > 0.0 && cutoff < 1.0) {
                bail!("cutoff must lie in (0, 1)");
            }
            let (curve, res) = cmd_fsc(&a, &b, cutoff, out.as_deref())?;
            for (f, c) in &curve.shells {
                println!("{f:.4}\t{c:.4}");
            }
            println!("resolution at {cutoff}: {res:.3} px");
        }
        Command::ExtractVolume { run, out, z, apix, force } => {
            if out.exists() && !force {
                bail!("{} exists (use --force)", out.display());
            }
            let z: Option<Vec<f64>> = z
                .map(|s| {
                    s.split(',')
                        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad latent entry {v:?}")))
                        .collect::<Result<_>>()
                })
                .transpose()?;
            let apix = match apix {
                Some(a) => a,
                None => run_config_in(&run)?.phantom.apix,
            };
            let vol = cmd_extract_volume(&run, z.as_deref(), apix, &out)?;
            println!("wrote {} ({}^3, {} Å/px)", out.display(), vol.side(), vol.apix());
        }
    }
    Ok(())
}

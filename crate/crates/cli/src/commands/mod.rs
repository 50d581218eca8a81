//! Subcommand implementations.

mod attack;
mod bench;
mod datagen;
mod defend;
mod train;

pub use attack::{cmd_attack, AttackArgs};
pub use bench::{cmd_bench, cmd_report, BenchArgs, ReportArgs};
pub use datagen::{cmd_gen, GenArgs};
pub use defend::{cmd_defend, cmd_restore, DefendArgs, RestoreArgs};
pub use train::{
    cmd_advtrain, cmd_contrastive, cmd_train, AdvTrainArgs, ContrastiveArgs, TrainArgs,
};

use arw_core::error::Result;
use arw_core::rng::fnv1a;
use std::path::{Path, PathBuf};

/// Header line embedded in every output file.
pub(crate) fn stamp(config_hash: u64, seed: u64) -> String {
    format!(
        "arw v{} seed={} config={:016x}",
        arw_core::ARTIFACT_VERSION,
        seed,
        config_hash
    )
}

/// Hash of the invocation arguments, used as the config hash for
/// non-bench commands.
pub(crate) fn args_hash(parts: &[String]) -> u64 {
    fnv1a(parts.join("\x1f").as_bytes())
}

pub(crate) fn resolve(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

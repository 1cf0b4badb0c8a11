//! Node key files: the 32-byte Ed25519 secret as one line of hex.

use std::io::Write;
use std::path::Path;

use oppweb_core::Identity;

use crate::error::{CliError, Result};

pub fn read_identity(path: &Path) -> Result<Identity> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("key {}: {e}", path.display())))?;
    let bytes = hex::decode(text.trim()).map_err(|_| CliError::Config(format!("key {}: not hex", path.display())))?;
    Identity::from_secret(&bytes).map_err(|e| CliError::Config(format!("key {}: {e}", path.display())))
}

/// Writes a new key file; an existing file is kept unless `force` is set.
pub fn write_identity(path: &Path, identity: &Identity, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Config(format!("{} already exists (use --force to replace it)", path.display())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::storage)?;
    }
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path).map_err(|e| CliError::Storage(format!("{}: {e}", path.display())))?;
    writeln!(f, "{}", hex::encode(identity.secret_bytes())).map_err(CliError::storage)
}

/// Loads the key at `path`, generating it on first use.
pub fn load_or_create(path: &Path) -> Result<(Identity, bool)> {
    if path.exists() {
        return Ok((read_identity(path)?, false));
    }
    let identity = Identity::generate(&mut rand::rngs::OsRng);
    write_identity(path, &identity, false)?;
    Ok((identity, true))
}

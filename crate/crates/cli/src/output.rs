//! Result files: CSV tables with a provenance comment, and run metadata as JSON.

use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Collects the files a command writes so `run.json` can list them.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    command: &'static str,
    hash: String,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: PathBuf, command: &'static str, hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(OutputDir {
            dir,
            command,
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn provenance(&self) -> String {
        format!(
            "# bnnsim {} {} config_sha256={}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.hash
        )
    }

    pub fn write_raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Writes a CSV table behind the provenance comment.
    pub fn write_csv<R: IntoIterator<Item = Vec<String>>>(
        &mut self,
        name: &str,
        header: &[&str],
        rows: R,
    ) -> Result<(), CliError> {
        let mut buf = self.provenance().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let err = |e: csv::Error| CliError::Config(format!("csv: {e}"));
            w.write_record(header).map_err(err)?;
            for row in rows {
                w.write_record(&row).map_err(err)?;
            }
            w.flush()
                .map_err(|e| CliError::io(&self.dir.join(name), e))?;
        }
        self.write_raw(name, &buf)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("json: {e}")))?;
        text.push('\n');
        self.write_raw(name, text.as_bytes())
    }
}

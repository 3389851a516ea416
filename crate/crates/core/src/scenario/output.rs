use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::ScenarioError;

/// Name of the completion marker written into every output directory.
pub const MANIFEST: &str = "MANIFEST";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |error| ScenarioError::Io {
        path: path.to_path_buf(),
        error,
    }
}

/// Output directory of one run. Tracks every file written.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    config_hash: String,
    files: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path, config_hash: &str) -> Result<Self, ScenarioError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn path_of(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Comma-separated table. `columns` pairs each name with its unit;
    /// `meta` lines go into the `#` header after the config hash.
    pub fn write_table(
        &mut self,
        name: &str,
        meta: &[String],
        columns: &[(&str, &str)],
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> Result<(), ScenarioError> {
        let path = self.path_of(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        let units: Vec<String> = columns.iter().map(|(c, u)| format!("{c}={u}")).collect();
        let mut header = format!("# config_sha256: {}\n# units: {}\n", self.config_hash, units.join(", "));
        for m in meta {
            header.push_str("# ");
            header.push_str(m);
            header.push('\n');
        }
        out.write_all(header.as_bytes()).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| std::io::Error::other(e);
        w.write_record(columns.iter().map(|(c, _)| *c))
            .map_err(to_io)
            .map_err(io_err(&path))?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(to_io)
                .map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        self.record(name);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), ScenarioError> {
        let path = self.path_of(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
        self.record(name);
        Ok(())
    }

    /// Marks the directory complete, or incomplete with the error that stopped the run.
    pub fn write_manifest(&self, failure: Option<&ScenarioError>) -> Result<(), ScenarioError> {
        let mut text = String::new();
        match failure {
            None => text.push_str("status: complete\n"),
            Some(e) => {
                text.push_str("status: incomplete\n");
                text.push_str(&format!("error: {e}\n"));
            }
        }
        text.push_str(&format!("config_sha256: {}\nfiles:\n", self.config_hash));
        for f in &self.files {
            text.push_str(&format!("  {f}\n"));
        }
        let path = self.path_of(MANIFEST);
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

//! Locating sequences on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kalman_assoc::assoc_net::EmbeddingTable;
use kalman_assoc::io::{parse_mot, MotFrames};

pub const DET_FILE: &str = "det.txt";
pub const GT_FILE: &str = "gt.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// Files of one sequence directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFiles {
    pub name: String,
    pub dir: PathBuf,
}

impl SequenceFiles {
    pub fn det(&self) -> PathBuf {
        self.dir.join(DET_FILE)
    }
    pub fn gt(&self) -> PathBuf {
        self.dir.join(GT_FILE)
    }
    pub fn embeddings(&self) -> PathBuf {
        self.dir.join(EMBEDDINGS_FILE)
    }
}

fn name_of(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".to_string())
}

/// `root` itself when it holds `file`, otherwise its immediate
/// subdirectories holding `file`, sorted by name.
pub fn discover(root: &Path, file: &str) -> Result<Vec<SequenceFiles>> {
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    if root.join(file).is_file() {
        return Ok(vec![SequenceFiles {
            name: name_of(root),
            dir: root.to_path_buf(),
        }]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let dir = entry?.path();
        if dir.join(file).is_file() {
            found.push(SequenceFiles {
                name: name_of(&dir),
                dir,
            });
        }
    }
    found.sort_by(|a, b| a.name.cmp(&b.name));
    if found.is_empty() {
        bail!(
            "no {file} found in {} or its subdirectories",
            root.display()
        );
    }
    Ok(found)
}

pub fn read_mot(path: &Path) -> Result<MotFrames> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_mot(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    if !path.is_file() {
        bail!("embedding sidecar {} does not exist", path.display());
    }
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    EmbeddingTable::read(std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

/// Creates `path`, lets `fill` write to it and flushes.
pub fn write_file<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> kalman_assoc::Result<()>,
{
    let mut out = File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))?;
    fill(&mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush()
        .with_context(|| format!("writing {}", path.display()))
}

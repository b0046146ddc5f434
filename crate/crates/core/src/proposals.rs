//! Proposal sets on disk.
//!
//! One directory per image:
//!
//! ```text
//! manifest.txt     PROPOSALS <image_id> <M>, then M lines "<coarse> <full|->"
//! q_000.soft       coarse soft grid of member 0
//! full_000.hard    full-resolution labels of member 0 (optional)
//! ```
//!
//! Manifest lines list members in index order. Full-resolution files are
//! either given for every member or for none.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::format::{parse_err, parse_hard, parse_soft, write_hard, write_soft, Lines};
use crate::rerank::{ProposalSet, RerankImage};
use crate::seg::{HardSegmentation, SoftSegmentation};

pub const MANIFEST: &str = "manifest.txt";

fn io_err(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

/// Reads a file, tagging any error (including parse errors) with its path.
pub fn read_with<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse(&text).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_soft(path: &Path) -> Result<SoftSegmentation> {
    read_with(path, parse_soft)
}

pub fn read_hard(path: &Path) -> Result<HardSegmentation> {
    read_with(path, parse_hard)
}

/// Writes `set` into `dir`, creating it if needed.
pub fn write_proposal_dir(dir: &Path, set: &ProposalSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut manifest = format!("PROPOSALS {} {}\n", set.image_id(), set.len());
    for (m, coarse) in set.coarse().iter().enumerate() {
        let q_name = format!("q_{m:03}.soft");
        write_text(&dir.join(&q_name), &write_soft(coarse))?;
        let full_name = match set.full_res() {
            Some(full) => {
                let name = format!("full_{m:03}.hard");
                write_text(&dir.join(&name), &write_hard(&full[m]))?;
                name
            }
            None => "-".to_string(),
        };
        manifest.push_str(&format!("{q_name} {full_name}\n"));
    }
    write_text(&dir.join(MANIFEST), &manifest)
}

struct ManifestEntry {
    coarse: PathBuf,
    full: Option<PathBuf>,
}

fn parse_manifest(dir: &Path, text: &str) -> Result<(String, Vec<ManifestEntry>)> {
    let mut lines = Lines::new(text);
    let (no, header) = lines.next_line()?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != "PROPOSALS" {
        return Err(parse_err(no, "expected header PROPOSALS <image_id> <M>"));
    }
    let count: usize = tokens[2].parse().map_err(|_| parse_err(no, "bad member count"))?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let (no, line) = lines.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(no, "expected \"<coarse file> <full file or ->\""));
        }
        entries.push(ManifestEntry {
            coarse: dir.join(fields[0]),
            full: (fields[1] != "-").then(|| dir.join(fields[1])),
        });
    }
    lines.expect_end()?;
    Ok((tokens[1].to_string(), entries))
}

pub fn read_proposal_dir(dir: &Path) -> Result<ProposalSet> {
    let manifest_path = dir.join(MANIFEST);
    let (image_id, entries) = read_with(&manifest_path, |t| parse_manifest(dir, t))?;
    let with_full = entries.iter().filter(|e| e.full.is_some()).count();
    if with_full != 0 && with_full != entries.len() {
        return Err(io_err(
            &manifest_path,
            "full-resolution files must be listed for all members or none",
        ));
    }
    let coarse = entries
        .iter()
        .map(|e| read_soft(&e.coarse))
        .collect::<Result<Vec<_>>>()?;
    let full = if with_full == 0 {
        None
    } else {
        Some(
            entries
                .iter()
                .map(|e| read_hard(e.full.as_deref().expect("checked above")))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    ProposalSet::new(image_id, coarse, full).map_err(|e| io_err(dir, e))
}

/// Subdirectories of a corpus root written by [`write_rerank_corpus`].
pub const PRED_DIR: &str = "pred";
pub const GT_DIR: &str = "gt";
pub const PROPOSAL_DIR: &str = "proposals";

/// Writes `root/pred/<id>.soft`, `root/gt/<id>.hard` (when known) and
/// `root/proposals/<id>/`.
pub fn write_rerank_corpus(root: &Path, images: &[RerankImage]) -> Result<()> {
    for sub in [PRED_DIR, GT_DIR, PROPOSAL_DIR] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    for image in images {
        let id = image.id();
        write_text(
            &root.join(PRED_DIR).join(format!("{id}.soft")),
            &write_soft(&image.pred),
        )?;
        if let Some(gt) = &image.gt {
            write_text(&root.join(GT_DIR).join(format!("{id}.hard")), &write_hard(gt))?;
        }
        write_proposal_dir(&root.join(PROPOSAL_DIR).join(id), &image.set)?;
    }
    Ok(())
}

/// Reads every proposal set under `proposal_dir` (one subdirectory per
/// image, in name order) with its prediction `pred_dir/<id>.soft` and,
/// when `gt_dir` is given, its ground truth `gt_dir/<id>.hard`.
pub fn read_rerank_corpus(pred_dir: &Path, proposal_dir: &Path, gt_dir: Option<&Path>) -> Result<Vec<RerankImage>> {
    let mut set_dirs = Vec::new();
    for entry in fs::read_dir(proposal_dir).map_err(|e| io_err(proposal_dir, e))? {
        let entry = entry.map_err(|e| io_err(proposal_dir, e))?;
        if entry.path().is_dir() {
            set_dirs.push(entry.path());
        }
    }
    set_dirs.sort();
    if set_dirs.is_empty() {
        return Err(io_err(proposal_dir, "no proposal sets found"));
    }
    set_dirs
        .iter()
        .map(|dir| {
            let set = read_proposal_dir(dir)?;
            let id = set.image_id().to_string();
            let pred = read_soft(&pred_dir.join(format!("{id}.soft")))?;
            let gt = gt_dir.map(|g| read_hard(&g.join(format!("{id}.hard")))).transpose()?;
            Ok(RerankImage { pred, set, gt })
        })
        .collect()
}

/// [`read_rerank_corpus`] on the standard layout under `root`.
pub fn read_rerank_root(root: &Path) -> Result<Vec<RerankImage>> {
    read_rerank_corpus(&root.join(PRED_DIR), &root.join(PROPOSAL_DIR), Some(&root.join(GT_DIR)))
}

use std::fs;
use std::path::{Path, PathBuf};

use bev2ego::scene::SceneConfig;

use crate::{CliError, CliResult};

/// Scene documents under `path`: a single file, or every `*.json` in a directory
/// in file-name order.
pub fn load_scenes(path: &Path) -> CliResult<Vec<SceneConfig>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(CliError::config(format!("no scene files under {}", path.display())));
    }
    let mut scenes = Vec::with_capacity(files.len());
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| CliError::config(format!("{}: {e}", f.display())))?;
        let scene = SceneConfig::from_document(&text).map_err(|e| CliError::config(format!("{}: {e}", f.display())))?;
        scenes.push(scene);
    }
    let mut ids: Vec<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::config(format!("duplicate scene id {}", w[0])));
    }
    Ok(scenes)
}

pub fn write_scene(dir: &Path, scene: &SceneConfig) -> CliResult<PathBuf> {
    let path = dir.join(format!("{}.json", scene.id));
    write_atomic(&path, scene.to_document().as_bytes())?;
    Ok(path)
}

/// Writes through a sibling temp file so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_atomic(path, text.as_bytes())
}

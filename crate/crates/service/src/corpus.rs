//! Writes a synthetic corpus to disk: rendered frames, manifests,
//! detections, a benchmark, captions, the palette and a config wired to the
//! in-process mock models.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use foresearch_core::frames::FrameSource;
use foresearch_core::par;
use foresearch_core::qa::stub::captions_for;
use foresearch_core::qa::write_jsonl;
use foresearch_core::synth::{scenario, ScenarioConfig, SyntheticVideo};

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    /// `(manifest.json, detections.jsonl)` per video.
    pub videos: Vec<(PathBuf, PathBuf)>,
    pub benchmark: PathBuf,
    pub captions: PathBuf,
    pub palette: PathBuf,
    pub world: PathBuf,
    pub config: PathBuf,
}

fn write_video(dir: &Path, world: &dyn FrameSource, v: &SyntheticVideo) -> io::Result<(PathBuf, PathBuf)> {
    let id = v.video_id();
    let frame_dir = dir.join("frames").join(id);
    fs::create_dir_all(&frame_dir)?;
    for i in 0..v.manifest.total_frames() {
        let f = world.frame(id, i).map_err(io::Error::other)?;
        fs::write(frame_dir.join(format!("{i:06}.png")), f.data)?;
    }
    let mut manifest = v.manifest.clone();
    manifest.frame_dir = Some(frame_dir);
    let mpath = dir.join("manifests").join(format!("{id}.json"));
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?)?;
    let dpath = dir.join("detections").join(format!("{id}.jsonl"));
    let mut text = String::new();
    for d in v.detections() {
        text.push_str(&serde_json::to_string(&d)?);
        text.push('\n');
    }
    fs::write(&dpath, text)?;
    Ok((mpath, dpath))
}

pub fn write_corpus(out: &Path, cfg: &ScenarioConfig) -> io::Result<Corpus> {
    fs::create_dir_all(out)?;
    let dir = fs::canonicalize(out)?;
    for sub in ["frames", "manifests", "detections"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let sc = scenario(cfg);
    let videos: Vec<&SyntheticVideo> = sc.world.videos().collect();
    let written = par::map(&videos, |v| write_video(&dir, &sc.world, v));
    let videos = written.into_iter().collect::<io::Result<Vec<_>>>()?;

    let benchmark = dir.join("benchmark.jsonl");
    write_jsonl(&benchmark, &sc.samples).map_err(io::Error::other)?;
    let captions = dir.join("captions.jsonl");
    write_jsonl(&captions, &captions_for(&sc.world)).map_err(io::Error::other)?;
    let palette = dir.join("palette.json");
    fs::write(&palette, serde_json::to_vec_pretty(sc.world.palette())?)?;
    let world = dir.join("world.json");
    fs::write(&world, sc.world.to_json())?;
    let config = dir.join("foresearch.toml");
    let toml = format!(
        "data_dir = {data:?}\nvlm_endpoint = \"mock://\"\n\n[encoder]\nendpoint = \"mock://\"\n\n\
         [mock_encoder]\npalette = {palette:?}\n\n[mock_vlm]\nbenchmark = {bench:?}\nfidelity = 1.0\n",
        data = dir.join("data").display().to_string(),
        palette = palette.display().to_string(),
        bench = benchmark.display().to_string(),
    );
    fs::write(&config, toml)?;
    Ok(Corpus {
        dir,
        videos,
        benchmark,
        captions,
        palette,
        world,
        config,
    })
}

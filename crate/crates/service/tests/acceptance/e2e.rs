//! The headless pipeline end to end, through the `vault` binary only: load a
//! multispectral image stack, embed it with t-SNE (cosine), cluster the
//! embedding, select a cluster, check that the selection shows up on the
//! image, then save, reopen and compare the hierarchy.

use std::path::Path;
use std::process::Command;

use rand::Rng;
use vault_core::core::Core;
use vault_core::project;

use crate::oracle::{normal, purity, rng};
use crate::{ensure, err, Outcome};

const SIDE: u32 = 64;
const BANDS: usize = 16;
const ITERATIONS: usize = 500;

/// Ground-truth material of pixel `(x, y)`: a disk, a band along the
/// bottom, and the background.
fn material(x: u32, y: u32) -> usize {
    let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
    if dx * dx + dy * dy <= 144.0 {
        0
    } else if y >= 44 {
        1
    } else {
        2
    }
}

fn spectrum(material: usize, band: usize) -> f64 {
    let t = band as f64 / (BANDS - 1) as f64;
    match material {
        0 => 0.2 + 0.8 * t,
        1 => 1.0 - 0.8 * t,
        _ => 0.3 + 0.7 * (-(t - 0.5).powi(2) / 0.02).exp(),
    }
}

/// Writes one grayscale PNG per band. Brightness ramps across the image,
/// which changes magnitudes but not spectral shape.
fn write_stack(dir: &Path) -> Result<(), String> {
    let mut rng = rng(0xe2e);
    let mut bands: Vec<image::GrayImage> = (0..BANDS).map(|_| image::GrayImage::new(SIDE, SIDE)).collect();
    for y in 0..SIDE {
        for x in 0..SIDE {
            let brightness = 0.5 + 0.5 * x as f64 / (SIDE - 1) as f64;
            let m = material(x, y);
            for (b, img) in bands.iter_mut().enumerate() {
                let v = 230.0 * brightness * spectrum(m, b) + 2.0 * normal(&mut rng) + rng.random_range(0.0..1.0);
                img.put_pixel(x, y, image::Luma([v.clamp(0.0, 255.0) as u8]));
            }
        }
    }
    for (b, img) in bands.iter().enumerate() {
        img.save(dir.join(format!("band_{b:02}.png"))).map_err(err)?;
    }
    Ok(())
}

struct Run {
    stdout: String,
}

fn vault(args: &[&str]) -> Result<Run, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vault")).args(args).output().map_err(err)?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    ensure(out.status.success(), || {
        format!("vault {} exited with {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(Run { stdout })
}

impl Run {
    fn line(&self, prefix: &str) -> Result<&str, String> {
        self.stdout
            .lines()
            .find(|l| l.starts_with(prefix))
            .ok_or_else(|| format!("no `{prefix}` line in output"))
    }

    /// The tree printed by `info`.
    fn hierarchy(&self) -> Result<Vec<String>, String> {
        let mut lines = self.stdout.lines().skip_while(|l| !l.starts_with("HIERARCHY "));
        let head = lines.next().ok_or("no hierarchy printed")?;
        let n: usize = head["HIERARCHY ".len()..].parse().map_err(err)?;
        Ok(lines.take(n).map(str::to_string).collect())
    }
}

fn indices(line: &str) -> Result<Vec<usize>, String> {
    let list = line.split_whitespace().nth(2).unwrap_or("");
    list.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().map_err(err)).collect()
}

pub fn headless_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let stack = dir.path().join("stack");
    std::fs::create_dir(&stack).map_err(err)?;
    write_stack(&stack)?;
    let archive = dir.path().join("scene.mvproj");
    let (stack_arg, archive_arg) = (stack.to_string_lossy().into_owned(), archive.to_string_lossy().into_owned());
    let iterations = format!("iterations={ITERATIONS}");

    let first = vault(&[
        "load", "--stack", &stack_arg, "--name", "scene",
        "+", "run", "org.vault.tsne", "--input", "scene", "--param", "metric=cosine", "--param", &iterations, "--wait",
        "+", "run", "org.vault.meanshift", "--input", "t-SNE embedding", "--wait",
        "+", "info",
        "+", "select", "Clusters", "--cluster", "0",
        "+", "selection", "scene image",
        "+", "save", &archive_arg,
    ])?;
    let tree = first.hierarchy()?;
    let clusters_line = tree
        .iter()
        .find(|l| l.trim_start().starts_with("Clusters "))
        .ok_or("no cluster dataset in the hierarchy")?;
    // "<name>  <kind> <items> clusters <k> ...": the count follows the last "clusters"
    let words: Vec<&str> = clusters_line.split_whitespace().collect();
    let k: usize = words
        .iter()
        .rposition(|w| *w == "clusters")
        .and_then(|at| words.get(at + 1))
        .ok_or("cluster count missing")?
        .parse()
        .map_err(err)?;
    ensure(k >= 2, || format!("mean-shift found {k} cluster(s)"))?;
    ensure(tree.iter().any(|l| l.contains(&format!("image {SIDE}x{SIDE}"))), || "image child missing".into())?;

    let selected: usize = first.line("SELECTED ")?.split_whitespace().nth(2).ok_or("count")?.parse().map_err(err)?;
    let on_image = indices(first.line("SELECTION ")?)?;
    ensure(on_image.len() == selected && selected > 0, || {
        format!("image shows {} selected pixels, {selected} were selected", on_image.len())
    })?;

    // the saved archive says which items cluster 0 holds
    let mut core = Core::with_builtin_plugins();
    project::load_project(&mut core, &archive).map_err(err)?;
    let clusters = core.data().records().find(|r| r.name == "Clusters").ok_or("clusters not saved")?.id;
    let payload = core.data().payload(clusters).map_err(err)?;
    let members = &payload.as_clusters().ok_or("not a cluster dataset")?.clusters[0].members;
    ensure(*members == on_image, || "image selection differs from the cluster's members".into())?;

    let truth: Vec<usize> = (0..SIDE * SIDE).map(|i| material(i % SIDE, i / SIDE)).collect();
    let picked: Vec<usize> = on_image.iter().map(|&i| truth[i]).collect();
    let coherent = purity(&vec![0; picked.len()], &picked);
    ensure(coherent >= 0.95, || format!("selected cluster mixes materials ({:.1}% pure)", coherent * 100.0))?;
    let mut assign = vec![0; truth.len()];
    for (c, cluster) in payload.as_clusters().unwrap().clusters.iter().enumerate() {
        for &m in &cluster.members {
            assign[m] = c;
        }
    }
    let overall = purity(&assign, &truth);

    let second = vault(&["open", &archive_arg, "+", "info"])?;
    ensure(second.hierarchy()? == tree, || "hierarchy differs after reopening".into())?;
    Ok(format!(
        "{SIDE}x{SIDE}x{BANDS} stack, {k} clusters ({:.1}% pure), cluster 0 = {selected} pixels ({:.1}% one material), reopened identically",
        overall * 100.0,
        coherent * 100.0
    ))
}

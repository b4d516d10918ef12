//! The `enet` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime or file-format
//! errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::analyzer::{compute_class_weights, count_flops, model_size_fp16, ClassHistogram, FlopConvention};
use crate::enwt::{load_weights, save_weights};
use crate::error::{Error, Result};
use crate::graph::{build_enet, init_weights, Graph};
use crate::passes::{fuse, validate};
use crate::pnm::{load_ppm, save_colormap, save_labelmap, Palette};
use crate::runtime::{argmax_labels, benchmark, plan_buffers, Executor};
use crate::tensor::{DType, Shape};
use crate::weights::WeightStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "enet", version, about = "ENet semantic segmentation on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Construct an ENet, initialize it from a seed and save its weights.
    Build {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a one-line-per-node listing of the graph.
        #[arg(long)]
        graph_out: Option<PathBuf>,
        /// Store weights as f32 instead of f16.
        #[arg(long)]
        f32: bool,
    },
    /// Print parameter count, FLOPs and model size.
    Analyze {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value = "fma2", value_parser = ["fma2", "mac"])]
        flops: String,
    },
    /// Segment a PPM image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, requires = "color")]
        palette: Option<PathBuf>,
        #[arg(long, requires = "palette")]
        color: Option<PathBuf>,
        #[arg(long)]
        no_fuse: bool,
    },
    /// Time repeated inference on a random input.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        no_fuse: bool,
    },
    /// Class weights 1/ln(c + p) from a `label count` histogram.
    ClassWeights {
        #[arg(long)]
        hist: PathBuf,
        #[arg(long, default_value_t = 1.02)]
        c: f64,
    },
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn write_out(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn check_divisible(height: usize, width: usize) -> Result<()> {
    if !height.is_multiple_of(8) || !width.is_multiple_of(8) || height == 0 || width == 0 {
        return Err(Error::Domain(format!(
            "image dimensions {height}×{width} are not divisible by 8 (the encoder downsamples three times)"
        )));
    }
    Ok(())
}

/// Rebuilds the graph for `classes` at the given size and checks the stored
/// weights against it; applies the fusion passes unless `no_fuse`.
fn load_model(
    model: &PathBuf,
    classes: usize,
    height: usize,
    width: usize,
    no_fuse: bool,
) -> Result<(Graph, WeightStore)> {
    check_divisible(height, width)?;
    let g = build_enet(classes, height, width)?;
    let w = load_weights(model)?;
    if let Some(d) = validate(&g, &w).into_iter().next() {
        return Err(match d.node {
            Some(node) => Error::Validation {
                node,
                message: format!("{} does not fit a {classes}-class ENet: {}", model.display(), d.message),
            },
            None => Error::Domain(format!("{}: {}", model.display(), d.message)),
        });
    }
    if no_fuse {
        return Ok((g, w));
    }
    let (g, w, _) = fuse(&g, &w)?;
    Ok((g, w))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Build {
            classes,
            height,
            width,
            seed,
            out: path,
            graph_out,
            f32,
        } => {
            check_divisible(height, width)?;
            let g = build_enet(classes, height, width)?;
            let w = init_weights(&g, seed)?;
            let dtype = if f32 { DType::F32 } else { DType::F16 };
            save_weights(&w, dtype, &path)?;
            if let Some(gp) = graph_out {
                std::fs::write(&gp, g.to_string()).map_err(|e| Error::io(&gp, e))?;
            }
            write_out(
                out,
                format_args!(
                    "wrote {} ({} tensors, {} parameters, {:?})\n",
                    path.display(),
                    w.len(),
                    w.total_elements(),
                    dtype
                ),
            )
        }
        Command::Analyze {
            classes,
            height,
            width,
            flops,
        } => {
            check_divisible(height, width)?;
            let g = build_enet(classes, height, width)?;
            let report = count_flops(&g, g.input_shape(), flops.parse::<FlopConvention>()?)?;
            let size = model_size_fp16(&g)?;
            write_out(out, &report)?;
            write_out(
                out,
                format_args!(
                    "fp16 file    {:.3} MB (payload {} + framing {} bytes)\n",
                    size.total() as f64 / 1e6,
                    size.payload_bytes,
                    size.overhead_bytes
                ),
            )
        }
        Command::Infer {
            model,
            classes,
            image,
            labels,
            palette,
            color,
            no_fuse,
        } => {
            let x = load_ppm(&image)?;
            let s = x.shape();
            let (g, w) = load_model(&model, classes, s.height, s.width, no_fuse)?;
            let palette = palette.map(Palette::load).transpose()?;
            let plan = plan_buffers(&g, s)?;
            let logits = Executor::new().run(&g, &w, &x, Some(&plan))?;
            let lm = argmax_labels(&logits);
            save_labelmap(&lm, &labels)?;
            if let (Some(p), Some(c)) = (palette, color) {
                save_colormap(&lm, &p, &c)?;
            }
            write_out(
                out,
                format_args!(
                    "segmented {} ({}×{}) into {} classes{}\n",
                    image.display(),
                    s.height,
                    s.width,
                    classes,
                    if no_fuse { "" } else { " (fused)" }
                ),
            )
        }
        Command::Bench {
            model,
            classes,
            height,
            width,
            warmup,
            iters,
            no_fuse,
        } => {
            let (g, w) = load_model(&model, classes, height, width, no_fuse)?;
            let r = benchmark(&g, &w, Shape::new(3, height, width)?, warmup, iters)?;
            write_out(
                out,
                format_args!(
                    "input {}  warmup {}  iters {}\nmean {:.3} ms  std {:.3} ms  {:.2} fps\n",
                    r.input, r.warmup, r.iters, r.mean_ms, r.std_ms, r.fps
                ),
            )
        }
        Command::ClassWeights { hist, c } => {
            let h = ClassHistogram::load(&hist)?;
            let weights = compute_class_weights(&h, c)?;
            let mut text = String::new();
            for (((label, _), p), wt) in h.entries().iter().zip(h.probabilities()).zip(weights) {
                text.push_str(&format!("{label}\t{p:.6}\t{wt:.6}\n"));
            }
            write_out(out, text)
        }
    }
}

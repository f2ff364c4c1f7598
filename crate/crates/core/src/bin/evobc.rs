use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use evobc_core::catalog::{read_manifest, split, validate_manifest, write_manifest};
use evobc_core::error::{Error, Result};
use evobc_core::imaging::Polarity;
use evobc_core::io::save_gray;
use evobc_core::pipeline::{
    discover_pages, evaluate_manifest, load_truths, page_error_line, page_status_line,
    write_output, write_traces, OcrChoice, Pipeline, RunConfig,
};
use evobc_core::synthgen::{
    corpus_page_name, corpus_page_spec, render_page, template_set, PageSpec,
};

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "evobc",
    version,
    about = "Extract and catalog glyph images from tabular dictionary scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OcrArg {
    Template,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    DarkOnLight,
    LightOnDark,
}

#[derive(Subcommand)]
enum Command {
    /// Extract glyphs from a directory of page scans.
    Pipeline {
        /// JSON run configuration; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        layout: Option<PathBuf>,
        /// JSON file with merge parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum)]
        ocr: Option<OcrArg>,
        #[arg(long)]
        templates: Option<PathBuf>,
        /// External recognizer command line; the header image path is appended.
        #[arg(long)]
        ocr_command: Option<String>,
        /// Simplified/traditional conversion table (TSV).
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        era: Option<String>,
        #[arg(long)]
        book: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        inherit_across_pages: bool,
        #[arg(long)]
        debug_traces: bool,
    },
    /// Render synthetic pages with ground truth and header templates.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON page spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        pages: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Cycle column counts through MIN..MAX (inclusive).
        #[arg(long, value_parser = parse_range)]
        columns: Option<[u32; 2]>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_enum)]
        polarity: Option<PolarityArg>,
    },
    /// Score a manifest against synthetic ground truth.
    Eval {
        /// Directory of ground truth JSON files.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Split a manifest 9:1 per category into train.json and val.json.
    Split {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a manifest against its schema and the files on disk.
    Validate {
        manifest: PathBuf,
        /// Corpus root; defaults to the manifest's directory.
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> std::result::Result<[u32; 2], String> {
    let (a, b) = s.split_once("..").unwrap_or((s, s));
    let lo: u32 = a.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    let hi: u32 = b.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("bad range {s:?}"));
    }
    Ok([lo, hi])
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn run_pipeline(mut cfg: RunConfig) -> Result<u8> {
    let pipeline = Pipeline::from_config(&cfg)?;
    let input = cfg.input.take().expect("validated");
    let out = cfg.out.take().expect("validated");
    let pages = discover_pages(&input)?;
    if pages.is_empty() {
        eprintln!("nothing to do: no page images in {}", input.display());
        return Ok(0);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let manifest_path = out.join("manifest.json");
    let next_ids = if manifest_path.exists() {
        read_manifest(&manifest_path)?.next_ids()
    } else {
        Default::default()
    };
    let result = pool.install(|| pipeline.process(&pages, &next_ids, cfg.debug_traces));

    for s in &result.pages {
        eprintln!("{}", page_status_line(s));
    }
    for f in &result.failures {
        eprintln!("{}", page_error_line(f));
    }
    let slices: usize = result.pages.iter().map(|p| p.slices).sum();
    eprintln!(
        "summary pages={} failed={} slices={} quarantined={} records={}",
        pages.len(),
        result.failures.len(),
        slices,
        result.quarantined.len(),
        result.extracted.len()
    );
    if result.pages.is_empty() {
        eprintln!("error: every page failed; no manifest written");
        return Ok(EXIT_PARTIAL);
    }
    let meta = pipeline.metadata(&result);
    let path = pool.install(|| write_output(&out, &result, meta))?;
    if cfg.debug_traces {
        write_traces(&out, &result.traces)?;
    }
    println!("{}", path.display());
    Ok(if result.failures.is_empty() {
        0
    } else {
        EXIT_PARTIAL
    })
}

fn run_synth(
    out: &Path,
    spec_path: Option<&Path>,
    pages: u64,
    seed: Option<u64>,
    columns: Option<[u32; 2]>,
    noise: Option<f64>,
    polarity: Option<PolarityArg>,
) -> Result<u8> {
    let mut base = match spec_path {
        Some(p) => PageSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => PageSpec::default(),
    };
    if let Some(s) = seed {
        base.seed = s;
    }
    if let Some(n) = noise {
        base.noise = n;
    }
    if let Some(p) = polarity {
        base.polarity = match p {
            PolarityArg::DarkOnLight => Polarity::DarkOnLight,
            PolarityArg::LightOnDark => Polarity::LightOnDark,
        };
    }
    let specs: Vec<PageSpec> = (0..pages)
        .map(|i| corpus_page_spec(&base, i, columns))
        .collect();
    for s in &specs {
        s.validate()?;
    }
    for t in template_set(&base.labels, base.template_seed) {
        save_gray(
            &out.join("templates").join(format!("{}.png", t.label)),
            &t.image(base.ink, base.paper),
        )?;
    }
    std::fs::create_dir_all(out.join("truth"))?;
    for (i, s) in specs.iter().enumerate() {
        let name = corpus_page_name(i as u64);
        let page = render_page(s, &name)?;
        save_gray(&out.join("pages").join(&name), &page.image)?;
        let json = serde_json::to_string_pretty(&page.truth).expect("truth serializes");
        let stem = name.trim_end_matches(".png");
        std::fs::write(out.join("truth").join(format!("{stem}.json")), json + "\n")?;
    }
    let json = serde_json::to_string_pretty(&base).expect("spec serializes");
    std::fs::write(out.join("spec.json"), json + "\n")?;
    println!("{}", out.display());
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Pipeline {
            config,
            input,
            out,
            layout,
            params,
            ocr,
            templates,
            ocr_command,
            table,
            source,
            era,
            book,
            jobs,
            seed,
            inherit_across_pages,
            debug_traces,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            macro_rules! set {
                ($($field:ident),*) => {$(
                    if let Some(v) = $field {
                        cfg.$field = Some(v);
                    }
                )*};
            }
            set!(input, out, layout, params, templates, table, source, era, book);
            if let Some(o) = ocr {
                cfg.ocr = match o {
                    OcrArg::Template => OcrChoice::Template,
                    OcrArg::External => OcrChoice::External,
                };
            }
            if let Some(cmd) = ocr_command {
                cfg.ocr_command = cmd.split_whitespace().map(String::from).collect();
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.inherit_across_pages |= inherit_across_pages;
            cfg.debug_traces |= debug_traces;
            run_pipeline(cfg)
        }
        Command::Synth {
            out,
            spec,
            pages,
            seed,
            columns,
            noise,
            polarity,
        } => run_synth(&out, spec.as_deref(), pages, seed, columns, noise, polarity),
        Command::Eval { truth, manifest } => {
            let m = read_manifest(&manifest)?;
            let truths = load_truths(&truth)?;
            print_json(&evaluate_manifest(&m, &truths));
            Ok(0)
        }
        Command::Split {
            manifest,
            seed,
            out,
        } => {
            let m = read_manifest(&manifest)?;
            let dir = out.unwrap_or_else(|| parent_dir(&manifest));
            let (train, val) = split(&m, seed);
            let (tp, vp) = (dir.join("train.json"), dir.join("val.json"));
            write_manifest(&train, &tp)?;
            write_manifest(&val, &vp)?;
            eprintln!(
                "split seed={seed} train={} val={}",
                train.records.len(),
                val.records.len()
            );
            println!("{}\n{}", tp.display(), vp.display());
            Ok(0)
        }
        Command::Validate { manifest, root } => {
            let m = read_manifest(&manifest)?;
            let root = root.unwrap_or_else(|| parent_dir(&manifest));
            let report = validate_manifest(&m, Some(&root));
            print_json(&report);
            Ok(if report.is_ok() { 0 } else { EXIT_PARTIAL })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

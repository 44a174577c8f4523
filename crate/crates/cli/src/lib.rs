//! `msunmix` command-line driver.
//!
//! Every subcommand reads its inputs, writes only inside `--out`, and returns
//! an exit code: 0 success, 2 usage, 3 data or format problem, 4 numerical
//! failure. Failures print one diagnostic line to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use msunmix::abundance::{solve_cube, AbundanceConfig};
use msunmix::bandsim::{BandSimulator, SimulationOptions};
use msunmix::extraction::{extract, normalize_pixels, ExtractionConfig, Method};
use msunmix::io::{self, AbundanceTable};
use msunmix::metrics::{match_endmembers, savd_report, SavdReport};
use msunmix::scene::{generate, SceneSpec};
use msunmix::spectral::flatten;
use msunmix::{BandKind, EndmemberSet, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "msunmix", version, about = "Spectral unmixing of simulated multispectral images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with exact ground truth.
    Generate(GenerateArgs),
    /// Integrate a hyperspectral cube against camera sensitivity curves.
    Simulate(SimulateArgs),
    /// Extract endmembers from a cube.
    Unmix(UnmixArgs),
    /// Estimate per-pixel abundances for given endmembers.
    Abundance(AbundanceArgs),
    /// Score one or more runs against ground truth.
    Evaluate(EvaluateArgs),
    /// Merge several method runs into one comparison.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Scene description (`key: value` lines).
    #[arg(long)]
    spec: PathBuf,
    /// Overrides any seed in the scene description.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Sensitivity curve file.
    #[arg(long)]
    camera: PathBuf,
    /// Single-column illumination spectrum.
    #[arg(long)]
    illumination: Option<PathBuf>,
    /// Also simulate these endmembers (e.g. ground truth).
    #[arg(long)]
    endmembers: Option<PathBuf>,
    /// Divide each channel by its integrated response.
    #[arg(long)]
    normalize_channels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct UnmixArgs {
    #[arg(long)]
    cube: PathBuf,
    /// vca, nfindr or nmf.
    #[arg(long)]
    method: String,
    /// Number of endmembers.
    #[arg(long = "endmembers")]
    p: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Scale every pixel to unit norm before extraction.
    #[arg(long)]
    normalize: bool,
    /// Keep panchromatic bands in spectra.csv.
    #[arg(long)]
    include_pan: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AbundanceArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    endmembers: PathBuf,
    #[arg(long)]
    no_sum_to_one: bool,
    #[arg(long)]
    no_nonnegative: bool,
    #[arg(long, default_value_t = 1e3)]
    sto_weight: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth_endmembers: PathBuf,
    #[arg(long)]
    truth_abundances: PathBuf,
    /// `LABEL=DIR` holding endmembers.csv and abundances.csv; repeatable.
    #[arg(long = "run", required = true)]
    runs: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory with one subdirectory per method.
    #[arg(long)]
    runs: PathBuf,
    /// Comma-separated method names; sets the column order.
    #[arg(long, value_delimiter = ',', default_value = "vca,nmf,nfindr")]
    methods: Vec<String>,
    #[arg(long)]
    truth_endmembers: Option<PathBuf>,
    #[arg(long)]
    truth_abundances: Option<PathBuf>,
    #[arg(long)]
    include_pan: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Lib(Error::Config(_)) => EXIT_USAGE,
            Failure::Lib(e) if e.is_numerical() => EXIT_NUMERICAL,
            Failure::Lib(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Unmix(a) => cmd_unmix(a),
        Command::Abundance(a) => cmd_abundance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("msunmix: error: {line}");
            e.exit_code()
        }
    }
}

fn out_dir(path: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| {
        Failure::Lib(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        Failure::Lib(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn names_of(set: &EndmemberSet) -> Vec<String> {
    (0..set.len()).map(|k| set.name(k)).collect()
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let text = read_text(&a.spec)?;
    // a later key wins, so the flag overrides the file
    let spec = SceneSpec::from_kv_str(&format!("{text}\nseed: {}\n", a.seed))?;
    let scene = generate(&spec)?;
    out_dir(&a.out)?;
    io::write_cube(&scene.cube, a.out.join("scene.cube"))?;
    let kinds = vec![BandKind::Selective; spec.axis.len()];
    io::write_endmembers(&scene.endmembers, &kinds, a.out.join("endmembers.csv"))?;
    let table = AbundanceTable::from_field(&scene.abundances, &names_of(&scene.endmembers))?;
    io::write_abundances(&table, a.out.join("abundances.csv"))?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let cube = io::read_cube(&a.cube)?;
    let mut camera = io::read_curves(&a.camera)?;
    if let Some(path) = &a.illumination {
        camera = camera.with_illumination(io::read_spectrum(path)?);
    }
    let truth = a.endmembers.as_ref().map(io::read_endmembers).transpose()?;
    let options = SimulationOptions {
        normalize: a.normalize_channels,
    };
    let sim = BandSimulator::new(&camera, cube.axis(), options)?;
    let out = sim.simulate_cube(&cube)?;
    let simulated_truth = match &truth {
        Some((set, _)) => {
            if !set.axis().approx_eq(cube.axis(), msunmix::abundance::AXIS_MATCH_TOL) {
                return Err(Error::Shape("endmember wavelengths differ from the cube's".into()).into());
            }
            // the CSV axis is rounded to 9 digits; use the cube's exact one
            let on_cube = EndmemberSet::new(cube.axis().clone(), set.signatures().to_vec())?.with_names(names_of(set))?;
            Some(sim.simulate_endmembers(&on_cube)?)
        }
        None => None,
    };
    out_dir(&a.out)?;
    io::write_cube(&out, a.out.join("simulated.cube"))?;
    if let Some(set) = simulated_truth {
        io::write_endmembers(&set, sim.kinds(), a.out.join("endmembers.csv"))?;
    }
    Ok(())
}

fn fmt_list<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_unmix(a: UnmixArgs) -> CmdResult {
    let method: Method = a.method.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let config = ExtractionConfig::new(a.p, a.seed).with_max_iter(a.max_iter).with_tol(a.tol);
    config.validate()?;
    let cube = io::read_cube(&a.cube)?;
    let data = flatten(&cube);
    let input = if a.normalize { normalize_pixels(&data) } else { data.clone() };
    let result = extract(method, &input, cube.axis(), &config)?;

    // selected pixels are reported in their original units
    let endmembers = match (&result.pixel_indices, a.normalize) {
        (Some(idx), true) => {
            let sigs = idx.iter().map(|&j| cube.pixel(j).to_vec()).collect();
            EndmemberSet::new(cube.axis().clone(), sigs)?
        }
        _ => result.endmembers.clone(),
    };
    let names: Vec<String> = (1..=a.p).map(|k| format!("em{k}")).collect();
    let endmembers = endmembers.with_names(names.clone())?;

    let mut meta = String::new();
    writeln!(meta, "method: {method}").unwrap();
    writeln!(meta, "endmembers: {}", a.p).unwrap();
    writeln!(meta, "seed: {}", a.seed).unwrap();
    writeln!(meta, "max_iter: {}", a.max_iter).unwrap();
    writeln!(meta, "tol: {}", a.tol).unwrap();
    writeln!(meta, "normalize: {}", a.normalize).unwrap();
    writeln!(meta, "pixels: {}", cube.num_pixels()).unwrap();
    writeln!(meta, "bands: {}", cube.bands()).unwrap();
    writeln!(meta, "iterations: {}", result.iterations).unwrap();
    match &result.pixel_indices {
        Some(idx) => writeln!(meta, "pixel_indices: {}", fmt_list(idx)).unwrap(),
        None => writeln!(meta, "pixel_indices: none").unwrap(),
    }
    writeln!(meta, "objective_trace: {}", fmt_list(&result.objective_trace)).unwrap();

    let series: Vec<(String, Vec<f64>)> = names
        .iter()
        .zip(endmembers.signatures())
        .map(|(n, s)| (n.clone(), s.clone()))
        .collect();
    let spectra = io::spectra_table_to_string(cube.axis(), cube.band_kinds(), &series, a.include_pan)?;

    out_dir(&a.out)?;
    io::write_endmembers(&endmembers, cube.band_kinds(), a.out.join("endmembers.csv"))?;
    io::write_atomic(&a.out.join("spectra.csv"), spectra.as_bytes())?;
    io::write_atomic(&a.out.join("run.txt"), meta.as_bytes())?;
    Ok(())
}

fn cmd_abundance(a: AbundanceArgs) -> CmdResult {
    let config = AbundanceConfig {
        sum_to_one: !a.no_sum_to_one,
        nonnegative: !a.no_nonnegative,
        sto_weight: a.sto_weight,
    };
    config.validate()?;
    let cube = io::read_cube(&a.cube)?;
    let (endmembers, _) = io::read_endmembers(&a.endmembers)?;
    let field = solve_cube(&cube, &endmembers, &config)?;
    let names = names_of(&endmembers);
    let table = AbundanceTable::from_field(&field, &names)?;
    out_dir(&a.out)?;
    io::write_abundances(&table, a.out.join("abundances.csv"))?;
    io::write_abundance_maps(&field, &names, a.out.join("maps"))?;
    Ok(())
}

/// One scored run: matching plus SAVD summary in ground-truth order.
struct Scored {
    label: String,
    matches: Vec<(String, String, f64)>,
    report: SavdReport,
}

fn score_run(label: &str, dir: &Path, truth: &EndmemberSet, truth_ab: &AbundanceTable) -> std::result::Result<Scored, Failure> {
    let (est, _) = io::read_endmembers(dir.join("endmembers.csv"))?;
    let est_ab = io::read_abundances(dir.join("abundances.csv"))?;
    if est.len() != truth.len() {
        return Err(Error::Shape(format!("run '{label}' has {} endmembers, truth has {}", est.len(), truth.len())).into());
    }
    if est_ab.names != names_of(&est) {
        return Err(Error::Shape(format!("run '{label}': abundance columns do not match its endmembers")).into());
    }
    if est_ab.ids != truth_ab.ids {
        return Err(Error::Shape(format!("run '{label}': abundance rows do not match the ground truth ids")).into());
    }
    let m = match_endmembers(&est, truth)?;
    let truth_names = names_of(truth);
    let aligned = est_ab.permuted(&m.permutation, truth_names.clone())?;
    let report = savd_report(&aligned.rows, &truth_ab.rows, &truth_names)?;
    let matches = (0..est.len())
        .map(|i| (est.name(i), truth_names[m.permutation[i]].clone(), m.per_pair_sad[i]))
        .collect();
    Ok(Scored {
        label: label.to_string(),
        matches,
        report,
    })
}

/// Column of a SAVD table: a scored run, or a run that is missing.
enum Column {
    Present(Scored),
    Absent(String),
}

impl Column {
    fn label(&self) -> &str {
        match self {
            Column::Present(s) => &s.label,
            Column::Absent(l) => l,
        }
    }
}

fn savd_csv(names: &[String], columns: &[Column]) -> String {
    let mut out = String::from("endmember");
    for c in columns {
        out.push(',');
        out.push_str(c.label());
    }
    out.push('\n');
    let cell = |c: &Column, f: &dyn Fn(&SavdReport) -> Option<f64>| match c {
        Column::Present(s) => f(&s.report).map(io::fmt9).unwrap_or_default(),
        Column::Absent(_) => "absent".to_string(),
    };
    let mut row = |label: &str, f: &dyn Fn(&SavdReport) -> Option<f64>| {
        out.push_str(label);
        for c in columns {
            out.push(',');
            out.push_str(&cell(c, f));
        }
        out.push('\n');
    };
    for (k, n) in names.iter().enumerate() {
        row(n, &|r| r.per_endmember_mean[k]);
    }
    row("Average", &|r| Some(r.overall_mean));
    row("Std", &|r| Some(r.overall_std));
    out
}

fn savd_text(names: &[String], columns: &[Column]) -> String {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["SAVD (%)".to_string()];
    header.extend(columns.iter().map(|c| c.label().to_string()));
    rows.push(header);
    let cell = |c: &Column, v: Option<Option<f64>>| match (c, v) {
        (Column::Absent(_), _) => "absent".to_string(),
        (_, Some(Some(x))) => format!("{x:.2}"),
        _ => "-".to_string(),
    };
    for (k, n) in names.iter().enumerate() {
        let mut r = vec![n.clone()];
        r.extend(columns.iter().map(|c| {
            let v = match c {
                Column::Present(s) => Some(s.report.per_endmember_mean[k]),
                Column::Absent(_) => None,
            };
            cell(c, v)
        }));
        rows.push(r);
    }
    for (label, pick) in [("Average", 0), ("Std", 1)] {
        let mut r = vec![label.to_string()];
        r.extend(columns.iter().map(|c| {
            let v = match c {
                Column::Present(s) => Some(Some(if pick == 0 { s.report.overall_mean } else { s.report.overall_std })),
                Column::Absent(_) => None,
            };
            cell(c, v)
        }));
        rows.push(r);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn match_csv(columns: &[Column]) -> String {
    let mut out = String::from("run,estimate,truth,sad\n");
    for c in columns {
        if let Column::Present(s) = c {
            for (e, t, sad) in &s.matches {
                out.push_str(&format!("{},{e},{t},{}\n", s.label, io::fmt9(*sad)));
            }
        }
    }
    out
}

fn parse_run(spec: &str) -> std::result::Result<(String, PathBuf), Failure> {
    match spec.split_once('=') {
        Some((l, d)) if !l.is_empty() && !d.is_empty() && !l.contains(',') => Ok((l.to_string(), PathBuf::from(d))),
        _ => Err(Failure::Usage(format!("--run expects LABEL=DIR, got '{spec}'"))),
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let runs = a.runs.iter().map(|r| parse_run(r)).collect::<std::result::Result<Vec<_>, _>>()?;
    let (truth, _) = io::read_endmembers(&a.truth_endmembers)?;
    let truth_ab = io::read_abundances(&a.truth_abundances)?;
    if truth_ab.names.len() != truth.len() {
        return Err(Error::Shape("truth abundances and endmembers differ in count".into()).into());
    }
    let columns = runs
        .iter()
        .map(|(label, dir)| score_run(label, dir, &truth, &truth_ab).map(Column::Present))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let names = names_of(&truth);
    out_dir(&a.out)?;
    io::write_atomic(&a.out.join("savd.csv"), savd_csv(&names, &columns).as_bytes())?;
    io::write_atomic(&a.out.join("savd.txt"), savd_text(&names, &columns).as_bytes())?;
    io::write_atomic(&a.out.join("match.csv"), match_csv(&columns).as_bytes())?;
    Ok(())
}

fn read_run_meta(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("run.txt"))
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once(':').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    if a.methods.is_empty() || a.methods.iter().any(|m| m.is_empty()) {
        return Err(Failure::Usage("--methods needs at least one non-empty name".into()));
    }
    let truth = match (&a.truth_endmembers, &a.truth_abundances) {
        (Some(e), Some(ab)) => Some((io::read_endmembers(e)?.0, io::read_abundances(ab)?)),
        (None, None) => None,
        _ => return Err(Failure::Usage("--truth-endmembers and --truth-abundances go together".into())),
    };

    let mut summary = String::from("method,status,endmembers,iterations,final_objective\n");
    let mut spectra: Vec<(String, Vec<f64>)> = Vec::new();
    let mut axis_kinds: Option<(msunmix::WavelengthAxis, Vec<BandKind>)> = None;
    let mut columns = Vec::new();
    for m in &a.methods {
        let dir = a.runs.join(m);
        let em_path = dir.join("endmembers.csv");
        if !em_path.is_file() {
            summary.push_str(&format!("{m},absent,,,\n"));
            columns.push(Column::Absent(m.clone()));
            continue;
        }
        let (set, kinds) = io::read_endmembers(&em_path)?;
        match &axis_kinds {
            None => axis_kinds = Some((set.axis().clone(), kinds.clone())),
            Some((ax, _)) if !ax.approx_eq(set.axis(), msunmix::abundance::AXIS_MATCH_TOL) => {
                return Err(Error::Shape(format!("run '{m}' uses different wavelengths from earlier runs")).into());
            }
            _ => {}
        }
        for k in 0..set.len() {
            spectra.push((format!("{m}_{}", set.name(k)), set.signature(k).to_vec()));
        }
        let meta = read_run_meta(&dir);
        let get = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone()).unwrap_or_default();
        let last = get("objective_trace").split_whitespace().last().unwrap_or("").to_string();
        summary.push_str(&format!("{m},present,{},{},{last}\n", set.len(), get("iterations")));
        if let Some((t, tab)) = &truth {
            if dir.join("abundances.csv").is_file() {
                columns.push(Column::Present(score_run(m, &dir, t, tab)?));
            } else {
                columns.push(Column::Absent(m.clone()));
            }
        }
    }

    out_dir(&a.out)?;
    io::write_atomic(&a.out.join("summary.csv"), summary.as_bytes())?;
    if let Some((axis, kinds)) = axis_kinds {
        let text = io::spectra_table_to_string(&axis, &kinds, &spectra, a.include_pan)?;
        io::write_atomic(&a.out.join("spectra.csv"), text.as_bytes())?;
    }
    if let Some((t, _)) = &truth {
        let names = names_of(t);
        io::write_atomic(&a.out.join("savd.csv"), savd_csv(&names, &columns).as_bytes())?;
        io::write_atomic(&a.out.join("savd.txt"), savd_text(&names, &columns).as_bytes())?;
        io::write_atomic(&a.out.join("match.csv"), match_csv(&columns).as_bytes())?;
    }
    Ok(())
}

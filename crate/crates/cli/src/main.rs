//! Batch command-line harness: decompose a matrix, generate test matrices,
//! re-verify a result document, and benchmark across thread counts.
//!
//! Exit codes: 0 on success (decompose additionally requires convergence,
//! verify requires the recomputed residuals to pass), 2 when a result was
//! produced but fails its accuracy gate, 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svds_core::io::{self, MatrixData, ResultDocument, ResultFormat};
use svds_core::kernels::{norm2, MatVec};
use svds_core::matgen::{self, SpectrumSpec};
use svds_core::solver::{
    estimate_flops, resolve_subspace, resolve_threads, truncated_svd, FlopModel, SvdsOptions,
};
use svds_core::SvdsError;

#[derive(Parser)]
#[command(
    name = "svds",
    version,
    about = "Truncated SVD of sparse and dense matrices with accuracy control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the top-k singular triplets of a Matrix Market file
    Decompose(DecomposeArgs),
    /// Generate a synthetic test matrix as a Matrix Market file
    Gen(GenArgs),
    /// Recompute the residuals of a stored result against its matrix
    Verify(VerifyArgs),
    /// Run one decomposition per thread count and emit a timing CSV
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Pattern {
    Decay1,
    Decay2,
    Decay3,
}

impl Pattern {
    fn spectrum_spec(self, length: usize) -> SpectrumSpec {
        match self {
            Pattern::Decay1 => SpectrumSpec::Decay1 { length },
            Pattern::Decay2 => SpectrumSpec::Decay2 { length },
            Pattern::Decay3 => SpectrumSpec::Decay3 { length },
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DocFormat {
    Json,
    Csv,
}

impl From<DocFormat> for ResultFormat {
    fn from(f: DocFormat) -> Self {
        match f {
            DocFormat::Json => ResultFormat::Json,
            DocFormat::Csv => ResultFormat::Csv,
        }
    }
}

#[derive(Args)]
struct DecomposeArgs {
    /// Input matrix (Matrix Market)
    #[arg(long)]
    input: PathBuf,
    /// Result document path; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of singular triplets to compute
    #[arg(long)]
    k: usize,
    /// Relative residual tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Subspace dimension override; default max(15, 3k), clamped to min(m,n)-1
    #[arg(long)]
    subspace: Option<usize>,
    /// Maximum number of restart cycles
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Seed for the start vector and breakdown recovery
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; default SVDS_NUM_THREADS, then all cores
    #[arg(long)]
    threads: Option<usize>,
    /// Result document format
    #[arg(long, value_enum, default_value_t = DocFormat::Json)]
    format: DocFormat,
    /// Also write U and V as Matrix Market files next to the output
    #[arg(long)]
    save_factors: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Destination Matrix Market file
    #[arg(long)]
    output: PathBuf,
    /// Dense matrix with the given singular value decay pattern
    #[arg(long, value_enum, conflicts_with = "sparse")]
    pattern: Option<Pattern>,
    /// Random sparse matrix instead of a dense one
    #[arg(long)]
    sparse: bool,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Nonzeros per row (requires --sparse)
    #[arg(long)]
    nnz_per_row: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Matrix the result was computed from
    #[arg(long)]
    input: PathBuf,
    /// Result document written by decompose --save-factors
    #[arg(long)]
    result: PathBuf,
    /// Bound the recomputed relative residuals must satisfy
    #[arg(long, default_value_t = 1e-8)]
    check_tol: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Input matrix (Matrix Market); or use the generator flags below
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dense generator pattern (alternative to --input)
    #[arg(long, value_enum, conflicts_with = "input")]
    pattern: Option<Pattern>,
    /// Sparse generator (alternative to --input)
    #[arg(long, conflicts_with_all = ["input", "pattern"])]
    sparse: bool,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    nnz_per_row: Option<usize>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    subspace: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated thread counts, one run per entry
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    /// CSV destination; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Decompose(args) => cmd_decompose(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

/// Flag wins over SVDS_NUM_THREADS, which wins over "all cores".
fn effective_threads(flag: Option<usize>) -> Result<usize, SvdsError> {
    if let Some(t) = flag {
        return Ok(resolve_threads(t));
    }
    if let Ok(value) = std::env::var("SVDS_NUM_THREADS") {
        let parsed: usize = value.trim().parse().map_err(|_| {
            SvdsError::InvalidArgument(format!("cannot parse SVDS_NUM_THREADS = '{value}'"))
        })?;
        return Ok(resolve_threads(parsed));
    }
    Ok(resolve_threads(0))
}

fn matrix_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<ExitCode, SvdsError> {
    if args.k == 0 {
        return Err(SvdsError::InvalidArgument("--k must be at least 1".into()));
    }
    if args.save_factors && args.output.is_none() {
        return Err(SvdsError::InvalidArgument(
            "--save-factors requires --output".into(),
        ));
    }
    let threads = effective_threads(args.threads)?;
    let data = io::read_matrix_market(&args.input)?;
    let opts = SvdsOptions {
        k: args.k,
        tol: args.tol,
        subspace: args.subspace,
        restarts: args.restarts,
        seed: args.seed,
        threads,
    };
    let result = truncated_svd(&data, &opts)?;

    let mut doc = ResultDocument {
        matrix_name: matrix_name(&args.input),
        m: data.nrows(),
        n: data.ncols(),
        nnz: data.nnz(),
        options: opts,
        singular_values: result.s.clone(),
        residuals: result.residuals.clone(),
        restarts: result.restarts,
        converged: result.converged,
        matvecs: result.matvecs,
        wall_time_seconds: result.wall_time.as_secs_f64(),
        threads,
        u_file: None,
        v_file: None,
    };

    if args.save_factors {
        let output = args.output.as_ref().unwrap();
        let stem = matrix_name(output);
        let dir = output.parent().unwrap_or(Path::new("."));
        let u_name = format!("{stem}.u.mtx");
        let v_name = format!("{stem}.v.mtx");
        io::write_matrix_market(dir.join(&u_name), &MatrixData::Dense(result.u.clone()))?;
        io::write_matrix_market(dir.join(&v_name), &MatrixData::Dense(result.v.clone()))?;
        doc.u_file = Some(u_name);
        doc.v_file = Some(v_name);
    }

    match &args.output {
        Some(path) => io::write_result(&doc, path, args.format.into())?,
        None => print!("{}", io::render_result(&doc, args.format.into())?),
    }
    Ok(if result.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode, SvdsError> {
    if args.rows == 0 || args.cols == 0 {
        return Err(SvdsError::InvalidArgument(
            "--rows and --cols must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = match (args.pattern, args.sparse) {
        (Some(pattern), false) => {
            if args.nnz_per_row.is_some() {
                return Err(SvdsError::InvalidArgument(
                    "--nnz-per-row applies only to --sparse".into(),
                ));
            }
            let s = matgen::spectrum(&pattern.spectrum_spec(args.rows.min(args.cols)))?;
            MatrixData::Dense(matgen::dense_with_spectrum(args.rows, args.cols, &s, &mut rng)?)
        }
        (None, true) => {
            let nnz_per_row = args.nnz_per_row.ok_or_else(|| {
                SvdsError::InvalidArgument("--sparse requires --nnz-per-row".into())
            })?;
            MatrixData::Sparse(matgen::random_sparse(
                args.rows,
                args.cols,
                nnz_per_row,
                &mut rng,
            )?)
        }
        (None, false) => {
            return Err(SvdsError::InvalidArgument(
                "choose a generator: --pattern <decay1|decay2|decay3> or --sparse".into(),
            ))
        }
        (Some(_), true) => unreachable!("clap rejects --pattern with --sparse"),
    };
    io::write_matrix_market(&args.output, &data)?;
    Ok(ExitCode::SUCCESS)
}

fn resolve_sibling(doc_path: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        doc_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn load_factor(path: &Path, rows: usize, cols: usize, role: &str) -> Result<svds_core::DenseMatrix, SvdsError> {
    let data = io::read_matrix_market(path)?;
    match data {
        MatrixData::Dense(d) if d.nrows() == rows && d.ncols() == cols => Ok(d),
        MatrixData::Dense(d) => Err(SvdsError::InvalidArgument(format!(
            "{role} factor is {}x{}, expected {rows}x{cols}",
            d.nrows(),
            d.ncols()
        ))),
        MatrixData::Sparse(_) => Err(SvdsError::InvalidArgument(format!(
            "{role} factor must be a dense array file"
        ))),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, SvdsError> {
    let data = io::read_matrix_market(&args.input)?;
    let doc = io::read_result(&args.result)?;
    if doc.m != data.nrows() || doc.n != data.ncols() {
        return Err(SvdsError::InvalidArgument(format!(
            "matrix is {}x{} but the result document records {}x{}",
            data.nrows(),
            data.ncols(),
            doc.m,
            doc.n
        )));
    }
    let k = doc.singular_values.len();
    let (u_name, v_name) = match (&doc.u_file, &doc.v_file) {
        (Some(u), Some(v)) => (u, v),
        _ => {
            return Err(SvdsError::InvalidArgument(
                "result document does not reference factor files; rerun decompose with --save-factors"
                    .into(),
            ))
        }
    };
    let u = load_factor(&resolve_sibling(&args.result, u_name), doc.m, k, "left")?;
    let v = load_factor(&resolve_sibling(&args.result, v_name), doc.n, k, "right")?;

    let mut worst = 0.0f64;
    let mut work_m = vec![0.0; doc.m];
    let mut work_n = vec![0.0; doc.n];
    for j in 0..k {
        let sigma = doc.singular_values[j];
        data.apply_into(v.col(j), &mut work_m);
        for (w, &ui) in work_m.iter_mut().zip(u.col(j)) {
            *w -= sigma * ui;
        }
        let forward = norm2(&work_m);
        data.apply_transpose_into(u.col(j), &mut work_n);
        for (w, &vi) in work_n.iter_mut().zip(v.col(j)) {
            *w -= sigma * vi;
        }
        let adjoint = norm2(&work_n);
        let residual = if sigma == 0.0 {
            if forward.max(adjoint) <= 1e-14 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            forward.max(adjoint) / sigma
        };
        worst = worst.max(residual);
    }
    println!("max recomputed relative residual over {k} triplets: {:e}", worst);
    Ok(if worst <= args.check_tol {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, SvdsError> {
    if args.k == 0 {
        return Err(SvdsError::InvalidArgument("--k must be at least 1".into()));
    }
    if args.threads.is_empty() {
        return Err(SvdsError::InvalidArgument("--threads list is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = match (&args.input, args.pattern, args.sparse) {
        (Some(path), None, false) => io::read_matrix_market(path)?,
        (None, Some(pattern), false) => {
            let (rows, cols) = generator_shape(&args)?;
            let s = matgen::spectrum(&pattern.spectrum_spec(rows.min(cols)))?;
            MatrixData::Dense(matgen::dense_with_spectrum(rows, cols, &s, &mut rng)?)
        }
        (None, None, true) => {
            let (rows, cols) = generator_shape(&args)?;
            let nnz_per_row = args.nnz_per_row.ok_or_else(|| {
                SvdsError::InvalidArgument("--sparse requires --nnz-per-row".into())
            })?;
            MatrixData::Sparse(matgen::random_sparse(rows, cols, nnz_per_row, &mut rng)?)
        }
        _ => {
            return Err(SvdsError::InvalidArgument(
                "choose exactly one source: --input, --pattern, or --sparse".into(),
            ))
        }
    };

    let mut csv = String::from(
        "threads,wall_time_seconds,matvecs,restarts,max_residual,flop_estimate,singular_values\n",
    );
    for &tc in &args.threads {
        let threads = resolve_threads(tc);
        let opts = SvdsOptions {
            k: args.k,
            tol: args.tol,
            subspace: args.subspace,
            restarts: args.restarts,
            seed: args.seed,
            threads,
        };
        let result = truncated_svd(&data, &opts)?;
        let flops = match resolve_subspace(data.nrows(), data.ncols(), args.k, args.subspace) {
            Ok(t) => estimate_flops(
                data.nrows(),
                data.ncols(),
                data.nnz_for_estimate(),
                args.k,
                t,
                result.restarts,
                &FlopModel::default(),
            )
            .total(),
            Err(_) => 0.0,
        };
        let max_residual = result.residuals.iter().cloned().fold(0.0f64, f64::max);
        let sigmas: Vec<String> = result.s.iter().map(|&s| io::fmt17(s)).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            threads,
            io::fmt17(result.wall_time.as_secs_f64()),
            result.matvecs,
            result.restarts,
            io::fmt17(max_residual),
            io::fmt17(flops),
            sigmas.join(" ")
        ));
    }
    match &args.output {
        Some(path) => io::write_atomic(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn generator_shape(args: &BenchArgs) -> Result<(usize, usize), SvdsError> {
    match (args.rows, args.cols) {
        (Some(r), Some(c)) if r > 0 && c > 0 => Ok((r, c)),
        _ => Err(SvdsError::InvalidArgument(
            "generator runs need positive --rows and --cols".into(),
        )),
    }
}

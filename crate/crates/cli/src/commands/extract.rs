use std::path::{Path, PathBuf};

use click2mask::masks::area_fraction;
use click2mask::metrics::{extract_edit_mask, ExtractParams};

use crate::error::{CliError, CliResult};
use crate::imageio::{load_rgb, save_mask};

#[derive(Debug, Clone)]
pub struct ExtractArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub params: ExtractParams,
    pub mask_out: Option<PathBuf>,
}

fn default_mask_out(output: &Path) -> PathBuf {
    let stem = output.file_stem().map_or("output".into(), |s| s.to_string_lossy());
    output.with_file_name(format!("{stem}.mask.png"))
}

pub fn run(args: ExtractArgs) -> CliResult<()> {
    if !(args.params.threshold >= 0.0 && args.params.threshold.is_finite()) {
        return Err(CliError::Usage(format!("--threshold {} must be >= 0", args.params.threshold)));
    }
    let a = load_rgb(&args.input)?;
    let b = load_rgb(&args.output)?;
    if a.dims() != b.dims() {
        return Err(CliError::Usage(format!(
            "image dimensions differ: {} is {}x{}, {} is {}x{}",
            args.input.display(),
            a.width(),
            a.height(),
            args.output.display(),
            b.width(),
            b.height()
        )));
    }
    let mask = extract_edit_mask(&a, &b, &args.params)?;
    let path = args.mask_out.unwrap_or_else(|| default_mask_out(&args.output));
    save_mask(&path, &mask)?;
    println!("{}", area_fraction(&mask));
    Ok(())
}

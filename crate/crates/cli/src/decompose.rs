//! Diagnostic decomposition of one homography.

use clap::Args;
use nrsfm_core::{
    build_s_matrix, is_degenerate, solve_normals, Error as CoreError, ImagePoint,
    LocalHomography, Mat3, UnitNormal,
};

use crate::config::ConfigFlags;
use crate::{FailContext, Failure};

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// The nine homography entries, row-major.
    #[arg(num_args = 9, required = true, value_name = "ENTRY", allow_hyphen_values = true)]
    entries: Vec<f64>,
    #[command(flatten)]
    config: ConfigFlags,
}

pub fn run(args: DecomposeArgs) -> Result<(), Failure> {
    let config = args.config.resolve().invalid("resolving configuration")?;
    let gate = config.gate().invalid("building degeneracy gate")?;
    let e = &args.entries;
    let h = Mat3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    let lh = LocalHomography::from_matrix(h, ImagePoint::new(0.0, 0.0))
        .invalid("normalizing homography")?;
    println!("cond = {:.9}", lh.cond());
    println!("tau = {}", gate.tau());
    if is_degenerate(&lh, &gate) {
        println!("degenerate = true");
        return Ok(());
    }
    println!("degenerate = false");
    let s = build_s_matrix(&lh).invalid("inverting homography")?;
    match solve_normals(&s) {
        Ok(c) => {
            let print = |label: &str, n: &UnitNormal, res: &[f64; 3]| {
                let v = n.as_vec();
                println!("candidate_{label} = ({:.12}, {:.12}, {:.12})", v.x, v.y, v.z);
                println!("residuals_{label} = ({:.3e}, {:.3e}, {:.3e})", res[0], res[1], res[2]);
            };
            print("a", &c.n_a, &c.residuals_a);
            print("b", &c.n_b, &c.residuals_b);
        }
        // Unsolvable shape matrices are a legitimate diagnostic outcome.
        Err(err @ (CoreError::DegenerateSMatrix | CoreError::NoRealSolution { .. })) => {
            println!("candidates = none ({err})");
        }
        Err(err) => return Err(err).numerical("solving candidate normals"),
    }
    Ok(())
}

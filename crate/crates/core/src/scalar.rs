//! Floating-point scalar abstraction shared by every differentiable module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Name used in checkpoints and logs.
    const NAME: &'static str;

    /// Lossless for `f64`, rounding for `f32`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Raw `C += A·B` on strided storage; callers go through [`gemm`].
    ///
    /// # Safety
    /// Every addressed element must lie inside the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: [isize; 2],
        b: *const Self,
        b_strides: [isize; 2],
        c: *mut Self,
        c_strides: [isize; 2],
    );
}

fn fits(len: usize, rows: usize, cols: usize, [rs, cs]: [usize; 2]) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

/// `C += A·B` with `A: m×k`, `B: k×n`, `C: m×n`, each given as (row stride, column stride).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: [usize; 2],
    b: &[T],
    sb: [usize; 2],
    c: &mut [T],
    sc: [usize; 2],
) {
    assert!(
        fits(a.len(), m, k, sa) && fits(b.len(), k, n, sb) && fits(c.len(), m, n, sc),
        "gemm operand out of bounds"
    );
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let st = |[r, c]: [usize; 2]| [r as isize, c as isize];
    // SAFETY: the assertion above bounds every addressed element.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), st(sa), b.as_ptr(), st(sb), c.as_mut_ptr(), st(sc)) }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        [rsa, csa]: [isize; 2],
        b: *const Self,
        [rsb, csb]: [isize; 2],
        c: *mut Self,
        [rsc, csc]: [isize; 2],
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        [rsa, csa]: [isize; 2],
        b: *const Self,
        [rsb, csb]: [isize; 2],
        c: *mut Self,
        [rsc, csc]: [isize; 2],
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc);
    }
}

/// Precision selector for runtime dispatch (configuration files, CLI).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

//! System model: per-class kernels `A_j^k(y)` evaluated at voxel centres,
//! and Monte-Carlo sensitivity maps `s_j^k`.
//!
//! The kernels are analytic while the sensitivities come from transport, so
//! `s_j^k = ∫ A_j^k(y) dy` holds only approximately.

mod kernel;
mod sensitivity;

pub use kernel::{
    build_rows, cone_kernel, kernel_at, kernel_value, list_mode_data, lor_kernel, KernelParams,
};
pub use sensitivity::{
    axial_profile, axial_profile_by_name, estimate_sensitivity, write_profile_csv,
    write_slice_csv, ProfileSeries, SensitivityMap,
};

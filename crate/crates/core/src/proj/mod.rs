//! Closed-form projections.

pub mod ls;
pub mod spectral;

pub use ls::{
    kkt_residual, reduce_ls, solve_box_trace_ls, solve_general_ls, BoxTraceLs, LsSolution,
    Reduction, StandardLs,
};
pub use spectral::{
    proj_sym_g, proj_sym_l, project_block, project_eigenvalues, project_spectral, update_block,
    update_case, update_eigenvalues, SpectralProjection, SpectralResult, UpdateCase,
};

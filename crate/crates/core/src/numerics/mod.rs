//! Deterministic numerical kernel: grids, centered transforms, slicing,
//! CTF, rotations and random Fourier features.

pub mod ctf;
pub mod fft;
pub mod rff;
pub mod rotation;
pub mod slice;
pub mod volume;

pub use ctf::{ctf_eval, CtfParams};
pub use fft::{fft2_centered, ifft2_centered, Complex64};
pub use rff::RffBasis;
pub use rotation::{rot6d_to_matrix, sample_rotation_uniform, sample_translation_uniform, Pose};
pub use slice::{project_real_space, slice_coords, translation_phase, trilinear_sample, SliceCoords};
pub use volume::{FourierVolume, Volume};

//! Fourier and Haar wavelet toolbox: transforms, radial spectrum profiles,
//! and power-law random fields.

pub mod fft;
pub mod haar;
pub mod powerlaw;
pub mod radial;

pub use fft::{dft1_raw, dft2, dft2_direct_raw, dft2_raw, idft2, idft2_raw, SpectrumGrid};
pub use haar::{
    dwt_haar_1d, dwt_haar_2d, dwt2_stacked_raw, idwt_haar_1d, idwt_haar_2d, idwt2_stacked_raw,
    WaveletBands,
};
pub use powerlaw::{sample_power_law_field, PowerLawSpectrum};
pub use radial::{profile_from_magnitudes, radial_profile, RadialProfile};

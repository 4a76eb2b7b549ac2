//! Polarized Monte Carlo oracle for plane-parallel slabs.
//!
//! Packets carry a Stokes weight in the meridian frame of their direction.
//! Scattering angles are drawn from a tabulated `a1` density, the turn of the
//! scattering plane from the density implied by the packet's linear
//! polarization, and the weight is multiplied by the full phase matrix over
//! the joint density, so polarization is transported without bias.

pub mod compare;
pub mod sampler;
pub mod tally;
pub mod trace;

pub use compare::{agreement, Agreement, BinSampling};
pub use tally::{read_csv, McRow, TallyBins, TallyGrid, MC_CSV_HEADER};
pub use trace::{mc_trace, PhotonPacket};

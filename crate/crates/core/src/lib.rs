pub mod ball_green;
pub mod bubble;
pub mod constants;
pub mod expansions;
pub mod galerkin;
pub mod kfield;
pub mod quadrature;
pub mod radial_pde;
pub mod reduced;

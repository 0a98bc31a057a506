pub mod ad;
pub mod dg;
pub mod experiments;
pub mod gkdv;
pub mod hskdv;
pub mod local;
pub mod rk;
pub mod selftest;
pub mod solve;
pub mod specialfn;
pub mod stepper;

pub mod archspace;
pub mod autodiff;
pub mod io;
pub mod selector;
pub mod supernet;
pub mod trainer;
pub mod zerocost;

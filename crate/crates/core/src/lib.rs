pub mod analysis;
pub mod dynamics;
pub mod graph;
pub mod integrator;
pub mod manifold;
pub mod objective;
pub mod quadrature;
pub mod selftest;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    pub mod graphs {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    pub mod objectives {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    pub mod dynamics {}
    #[doc = include_str!("../../../book/src/integration.md")]
    pub mod integration {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub mod analysis {}
    #[doc = include_str!("../../../book/src/manifold.md")]
    pub mod manifold {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}

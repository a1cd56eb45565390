//! Fixtures shared by the benchmarks.

use weak_euler::{catalog_model, make_grid, BrownianPath, CatalogEntry, Params};

pub fn entry(name: &str) -> CatalogEntry {
    catalog_model(name, &Params::new()).expect("catalog model")
}

/// Path `p` on `n` coarse steps refined by `kappa`.
pub fn path(e: &CatalogEntry, n: usize, kappa: usize, p: u64) -> BrownianPath {
    let g = make_grid(e.model.r, n, e.horizon).expect("grid");
    BrownianPath::sample(&g, kappa, 1, p).expect("path")
}

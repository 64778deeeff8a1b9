// Data-parallel helpers. With the `parallel` feature off every macro
// degrades to the sequential iterator; results are collected in input order
// either way so reductions stay deterministic.

macro_rules! par_map {
    ($slice:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelRefIterator, ParallelIterator};
            $slice.par_iter().map($f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            $slice.iter().map($f).collect()
        }
    }};
}

macro_rules! par_range_map {
    ($range:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelIterator, ParallelIterator};
            ($range).into_par_iter().map($f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            ($range).map($f).collect()
        }
    }};
}

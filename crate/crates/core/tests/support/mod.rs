pub mod reference_metric;

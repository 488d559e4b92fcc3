pub mod control;
pub mod dists;
pub mod evr;
pub mod figures;
pub mod files;
pub mod model;
pub mod oracle;

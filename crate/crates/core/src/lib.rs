pub mod csl;
pub mod explorer;
pub mod model;
pub mod numerics;
pub mod checker;
pub mod oracle;

pub mod fuzz;
pub mod gen;
pub mod node;
pub mod oracle;

pub mod kb;
pub mod skill;
pub mod sim;
pub mod deliberative;
pub mod executive;
pub mod dialog;
pub mod bt;
pub mod system;

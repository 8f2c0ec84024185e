pub mod attack;
pub mod codec;
pub mod flags;
pub mod ids;
pub mod pipeline;
pub mod scenario;
pub mod secure_ext;
pub mod sim;
pub mod time;
pub mod transmission;

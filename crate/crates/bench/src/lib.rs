pub use tempo_snn;

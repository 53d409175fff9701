//! Reference plugin: serves the toy backbone and toy models over the
//! JSON-lines plugin protocol on stdin/stdout.

use std::io::{stdin, stdout, BufWriter};

use aerialign_core::backbone::toy::{ToyBackbone, ToyPredictor};
use aerialign_core::plugin::PluginServer;
use aerialign_core::toy::{ToyCaptioner, ToyEmbedder, ToyEraser, ToyExtractor};

fn main() -> std::io::Result<()> {
    let backbone = ToyBackbone::new(ToyPredictor::Linear);
    let server = PluginServer {
        backbone: Some(&backbone),
        embedder: Some(&ToyEmbedder),
        captioner: Some(&ToyCaptioner),
        eraser: Some(&ToyEraser),
        extractor: Some(&ToyExtractor),
    };
    server.serve(stdin().lock(), BufWriter::new(stdout().lock()))
}

//! Decode against HTTP backends.
//!
//!     CAAD_EMBED_ENDPOINT=http://localhost:8001 \
//!     CAAD_MODEL_ENDPOINT=http://localhost:8002 \
//!     cargo run --example remote_backends -- SPACE.caad "prompt text"
//!
//! The space must have been built against the same embedder and model ids.

use caad::backends::remote::RemoteConfig;
use caad::{decode, Backends, DecodeConfig, GroundingSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (Ok(embed), Ok(model)) = (std::env::var("CAAD_EMBED_ENDPOINT"), std::env::var("CAAD_MODEL_ENDPOINT")) else {
        eprintln!("set CAAD_EMBED_ENDPOINT and CAAD_MODEL_ENDPOINT to run this example");
        return Ok(());
    };
    let mut args = std::env::args().skip(1);
    let (Some(space), Some(prompt)) = (args.next(), args.next()) else {
        eprintln!("usage: remote_backends SPACE.caad PROMPT");
        std::process::exit(2);
    };

    let backends = Backends::remote(&embed, &model, RemoteConfig::default())?;
    println!("{backends:?}");
    let space = GroundingSpace::load(&space)?;
    let mut config = DecodeConfig::default();
    config.stop_token_ids.extend(backends.model.eos_token_id());

    match decode(&prompt, &space, config, &backends) {
        Ok(out) => println!("{}", out.text),
        Err(caad::DecodeError::Step { step, source, partial }) => {
            eprintln!("failed at step {step}: {source}; {} steps completed", partial.steps.len());
            std::process::exit(1);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

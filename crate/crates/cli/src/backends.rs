//! Gateway, embedder and registry construction from command-line flags.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use coder_forge::embed::{Embedder, FixtureEmbedder, HashEmbedder, HttpEmbedder, DEFAULT_HASH_DIM};
use coder_forge::gateway::{Gateway, GatewayConfig, HttpGateway, MockGateway};
use coder_forge::mining::{FillRule, MiningConfig, DEFAULT_CANDIDATE_POOL, DEFAULT_K_NEGATIVES, DEFAULT_MARGIN};
use coder_forge::registry::{load_registry_with, CountPolicy, Registry};
use coder_forge::synth::GenerationOptions;

pub const MOCK_MODEL: &str = "mock";

#[derive(Debug, Clone, Args)]
pub struct GatewayArgs {
    /// Serve completions from a JSON-lines fixture file instead of the HTTP
    /// endpoint (CODER_FORGE_API_BASE / CODER_FORGE_API_KEY).
    #[arg(long, value_name = "FIXTURES")]
    pub mock: Option<PathBuf>,
    /// Model name sent with each request; required for the HTTP endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// Sampling temperature for generation calls. Judging calls always use 0.
    #[arg(long, default_value_t = 0.0)]
    pub gen_temperature: f64,
    /// Output token limit per completion.
    #[arg(long, default_value_t = 2048)]
    pub max_tokens: u32,
    /// Concurrent HTTP requests.
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
    /// Token budget per minute for the HTTP endpoint.
    #[arg(long)]
    pub tokens_per_minute: Option<u64>,
}

impl GatewayArgs {
    pub fn build(&self) -> Result<Box<dyn Gateway>> {
        if let Some(path) = &self.mock {
            return Ok(Box::new(MockGateway::from_path(path)?));
        }
        if self.model.is_none() {
            bail!("--model is required unless --mock is given");
        }
        let mut cfg = GatewayConfig::from_env()?;
        cfg.max_in_flight = self.max_in_flight.max(1);
        cfg.tokens_per_minute = self.tokens_per_minute;
        Ok(Box::new(HttpGateway::new(cfg)))
    }

    pub fn model(&self) -> String {
        self.model.clone().unwrap_or_else(|| MOCK_MODEL.to_string())
    }

    pub fn options(&self, seed: u64) -> GenerationOptions {
        GenerationOptions {
            temperature: self.gen_temperature,
            max_output_tokens: self.max_tokens,
            seed: Some(seed),
            ..GenerationOptions::new(self.model())
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Deterministic hash embedder, `seed:N[,dim:D]`.
    #[arg(long, value_name = "SPEC")]
    pub mock_embedder: Option<String>,
    /// Embeddings looked up from a JSON-lines fixture of text (or text_hash) and vector.
    #[arg(long, value_name = "FILE")]
    pub embed_fixtures: Option<PathBuf>,
    /// Embedding model served by the HTTP endpoint.
    #[arg(long)]
    pub embed_model: Option<String>,
}

impl EmbedArgs {
    /// `fallback_seed` selects a hash embedder when no embedder flag is set
    /// and the run is otherwise fully mocked.
    pub fn build(&self, fallback_seed: Option<u64>) -> Result<Box<dyn Embedder>> {
        let chosen = [self.mock_embedder.is_some(), self.embed_fixtures.is_some(), self.embed_model.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if chosen > 1 {
            bail!("choose one of --mock-embedder, --embed-fixtures, --embed-model");
        }
        if let Some(spec) = &self.mock_embedder {
            return Ok(Box::new(HashEmbedder::from_spec(spec)?));
        }
        if let Some(path) = &self.embed_fixtures {
            return Ok(Box::new(FixtureEmbedder::from_path(path)?));
        }
        if let Some(model) = &self.embed_model {
            let cfg = GatewayConfig::from_env()?;
            return Ok(Box::new(HttpEmbedder::new(&cfg.api_base, cfg.api_key, model)));
        }
        match fallback_seed {
            Some(seed) => Ok(Box::new(HashEmbedder::new(seed, DEFAULT_HASH_DIM))),
            None => bail!("no embedder configured (use --mock-embedder, --embed-fixtures or --embed-model)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FillArg {
    RandomBelowCeiling,
    Error,
}

#[derive(Debug, Clone, Args)]
pub struct MiningArgs {
    /// Hard negatives per sample.
    #[arg(long, default_value_t = DEFAULT_K_NEGATIVES)]
    pub k: usize,
    /// Negatives must score below margin times the positive's score.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Nearest neighbours considered before the margin cut.
    #[arg(long, default_value_t = DEFAULT_CANDIDATE_POOL)]
    pub candidate_pool: usize,
    /// What to do when the candidate pool yields fewer than k negatives.
    #[arg(long, value_enum, default_value_t = FillArg::RandomBelowCeiling)]
    pub fill_rule: FillArg,
}

impl MiningArgs {
    pub fn config(&self, seed: u64) -> MiningConfig {
        MiningConfig {
            k_negatives: self.k,
            margin: self.margin,
            candidate_pool: self.candidate_pool,
            fill_rule: match self.fill_rule {
                FillArg::RandomBelowCeiling => FillRule::RandomBelowCeiling,
                FillArg::Error => FillRule::Error,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RegistryArgs {
    /// Registry directory holding tasks.jsonl and languages.txt; the bundled
    /// registry is used when absent.
    #[arg(long, value_name = "DIR")]
    pub registry: Option<PathBuf>,
    /// Accept registries that extend the published task and language counts.
    #[arg(long)]
    pub extensible: bool,
}

impl RegistryArgs {
    pub fn load(&self) -> Result<Registry> {
        let policy = if self.extensible {
            CountPolicy::Extensible
        } else {
            CountPolicy::Published
        };
        match &self.registry {
            Some(dir) => load_registry_with(dir, policy).with_context(|| format!("loading registry {}", dir.display())),
            None => Ok(Registry::bundled()),
        }
    }
}

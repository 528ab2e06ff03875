//! The sample configuration in the README parses and sets what it says.

use datasetagent::pipeline::RunConfig;

#[test]
fn readme_sample_config_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").expect("toml block") + "```toml\n".len();
    let end = start + readme[start..].find("```").expect("closing fence");
    let cfg = RunConfig::from_toml(&readme[start..end]).unwrap();
    assert_eq!(cfg.workers, 4);
    assert_eq!(cfg.min_resolution, Some((32, 32)));
    assert_eq!(cfg.noise_sigma, Some(2.0));
    assert_eq!(cfg.label.requery_floor, 0.3);
    assert_eq!(cfg.label.mask_check.hole_max, 16);
    assert_eq!(cfg.retry.max_retries, 2);
    assert_eq!(cfg.backends.api_key_env, "MY_API_KEY");
    assert_eq!(cfg.corpus.as_deref(), Some(std::path::Path::new("./candidates")));
}

//! Reading and writing `.vec` files, preprocessing, dictionary filtering
//! and the binary cache.

use goatbli::embeddings::{
    build_graph, filter_one_to_one, load_vec, parse_dictionary, preprocess, read_cache, split_seeds,
    write_cache,
};

fn main() -> goatbli::Result<()> {
    let dir = std::env::temp_dir().join(format!("goatbli-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| goatbli::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("toy.vec");
    std::fs::write(&path, "4 3\nthe 1 0 0\ncat 0.5 0.5 0\ndog 0.4 0.6 0.1\nbroken 1 2\nfish 0 0 1\n")
        .map_err(|e| goatbli::Error::Io { path: path.clone(), source: e })?;

    let raw = load_vec(&path, None)?;
    println!("loaded {} words of dimension {}", raw.len(), raw.dim());
    let space = preprocess(&raw)?;
    let graph = build_graph(&space, &["cat", "dog", "fish"])?;
    println!("cos(cat, dog) after preprocessing = {:.3}", graph.get(0, 1));

    let dict = parse_dictionary("cat chat\ncat minou\ndog chien\nfish poisson\nthe le\n", "inline")?;
    let one_to_one = filter_one_to_one(&dict);
    println!("{} dictionary pairs, {} after one-to-one filtering", dict.len(), one_to_one.len());

    let target = space.with_vectors(space.vectors().clone())?;
    let renamed = goatbli::embeddings::EmbeddingSpace::new(
        vec!["le".into(), "chat".into(), "chien".into(), "poisson".into()],
        target.vectors().clone(),
    )?;
    let (seeds, test) = split_seeds(&one_to_one, 2, &space, &renamed)?;
    println!("seeds {:?}\ntest {:?}", seeds.pairs, test.pairs);

    let cache = dir.join("toy.cache");
    write_cache(&space, &cache)?;
    println!("cache round trip exact: {}", read_cache(&cache)? == space);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

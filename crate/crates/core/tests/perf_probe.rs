use findvehicle_kit::ctim::*;
use findvehicle_kit::generator::AttributeCatalog;
use findvehicle_kit::tensor::{kernels, Tensor};
use findvehicle_kit::util::stream_rng;
use findvehicle_kit::vti::*;
use std::time::Instant;

#[test]
fn perf_probe() {
    let catalog = AttributeCatalog::default_catalog();
    let ds = make_vti_dataset(200, 1, &catalog).unwrap();
    let vocab = AttributeVocab::from_catalog(&catalog);
    let model: CtimModel<f32> = CtimModel::new(CtimConfig::default(), vocab, 0).unwrap();
    let src = LazyVti::new(&ds.train, &catalog);

    // Render cost
    let t = Instant::now();
    let samples: Vec<VtiSample<f32>> = (0..64).map(|i| SampleSource::<f32>::get(&src, i)).collect();
    println!("render 64: {:?}", t.elapsed());

    // Eval forward, batch 64
    let mut pixels = Vec::new();
    let mut triples = Vec::new();
    for s in &samples { pixels.extend_from_slice(s.image.data()); triples.push(s.triple.clone()); }
    let images = Tensor::from_vec(&[64, 3, 64, 64], pixels).unwrap();
    let t = Instant::now();
    let _ = model.similarity_batch(&images, &triples).unwrap();
    println!("eval fwd batch64: {:?}", t.elapsed());
    let t = Instant::now();
    let _ = model.similarity_batch(&images, &triples).unwrap();
    println!("eval fwd batch64 again: {:?}", t.elapsed());

    // Raw kernel timings at unit-1 shapes, batch 8
    let mut rng = stream_rng(0, 0);
    let x = Tensor::<f32>::rand_uniform(&[8, 8, 64, 64], 0.5, &mut rng);
    let dw = Tensor::<f32>::rand_uniform(&[8, 3, 3], 0.5, &mut rng);
    let pw = Tensor::<f32>::rand_uniform(&[8, 8, 1, 1], 0.5, &mut rng);
    let t = Instant::now();
    for _ in 0..100 { let _ = kernels::depthwise_conv2d(&x, &dw, 1, 1).unwrap(); }
    println!("dw3x3 (8,8,64,64) x100: {:?}", t.elapsed());
    let t = Instant::now();
    for _ in 0..100 { let _ = kernels::conv2d(&x, &pw, 1, 0).unwrap(); }
    println!("pw1x1 (8,8,64,64) x100: {:?}", t.elapsed());
    let g = Tensor::<f32>::rand_uniform(&[8, 8, 64, 64], 0.5, &mut rng);
    let t = Instant::now();
    for _ in 0..100 { let _ = kernels::depthwise_conv2d_backward(&x, &dw, 1, 1, &g).unwrap(); }
    println!("dw3x3 bwd x100: {:?}", t.elapsed());
    let t = Instant::now();
    for _ in 0..100 { let _ = kernels::conv2d_backward(&x, &pw, 1, 0, &g).unwrap(); }
    println!("pw1x1 bwd x100: {:?}", t.elapsed());
    let gamma = Tensor::<f32>::full(&[8], 1.0);
    let beta = Tensor::<f32>::zeros(&[8]);
    let t = Instant::now();
    for _ in 0..100 { let _ = kernels::batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap(); }
    println!("bn train x100: {:?}", t.elapsed());
    let stem_x = Tensor::<f32>::rand_uniform(&[8, 3, 64, 64], 0.5, &mut rng);
    let stem_w = Tensor::<f32>::rand_uniform(&[8, 3, 3, 3], 0.5, &mut rng);
    let t = Instant::now();
    for _ in 0..100 { let _ = kernels::conv2d(&stem_x, &stem_w, 1, 1).unwrap(); }
    println!("stem conv x100: {:?}", t.elapsed());
}

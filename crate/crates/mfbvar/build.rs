fn main() {
    if std::env::var_os("CARGO_FEATURE_SYSTEM_BLAS").is_some() {
        println!("cargo:rustc-link-lib=dylib=openblas");
    }
}

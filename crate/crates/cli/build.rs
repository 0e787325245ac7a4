fn main() {
    println!("cargo:rerun-if-env-changed=DEP_ROCKGAN_LIBTORCH_LIB");
    if let Ok(dir) = std::env::var("DEP_ROCKGAN_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
    }
}

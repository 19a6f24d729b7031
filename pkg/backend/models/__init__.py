# Model zoo package

# Surface-to-stimulus alignment toolkit

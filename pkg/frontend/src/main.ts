import { InterviewApp } from "./app.js";

const mount = document.getElementById("app");
if (!mount) {
    throw new Error("missing #app mount point");
}
new InterviewApp(mount);
